import random

import pytest

from cplm.corpus import Corpus
from cplm.errors import ConfigError, DecodingError
from cplm.tokenizer import SPECIAL_TOKENS, Tokenizer, decode, encode, train_tokenizer


def corpus(*sentences):
    return Corpus(tuple(sentences), "t")


def test_full_coverage_within_budget():
    tok = train_tokenizer(corpus("the cat", "the dog"), 10)
    assert {"the", "cat", "dog"} | set(SPECIAL_TOKENS) <= set(tok.vocab)
    assert len(tok) <= 10


def test_budget_keeps_most_frequent():
    tok = train_tokenizer(corpus("a a a b b c", "d e b a c"), len(SPECIAL_TOKENS) + 3)
    assert tok.tokens[len(SPECIAL_TOKENS):] == ("a", "b", "c")
    assert encode(tok, "d e") == [tok.unk_id, tok.unk_id]


def test_frequency_ties_break_lexicographically():
    tok = train_tokenizer(corpus("zeta alpha mid"), len(SPECIAL_TOKENS) + 2)
    assert tok.tokens[len(SPECIAL_TOKENS):] == ("alpha", "mid")


@pytest.mark.parametrize("args", [((), 10), (("a b c",), 4)])
def test_training_errors(args):
    sentences, size = args
    with pytest.raises(ConfigError):
        train_tokenizer(corpus(*sentences), size)


def test_specials_below_learned_ids():
    tok = train_tokenizer(corpus("x y z"), 100)
    assert sorted(tok.special_ids.values()) == [0, 1, 2, 3]
    assert all(tok.vocab[t] >= 4 for t in ("x", "y", "z"))
    assert {v: k for k, v in tok.vocab.items()} == tok.inverse_vocab


def test_encode_examples(tiny_tok):
    assert encode(tiny_tok, "the cat sat") == [4, 5, 6]
    assert encode(tiny_tok, "the cat sat", add_bos=True) == [0, 4, 5, 6]
    assert encode(tiny_tok, "the zebra") == [4, 1]


def test_decode_examples(tiny_tok):
    assert decode(tiny_tok, [4, 5, 6]) == "the cat sat"
    assert decode(tiny_tok, [0, 4, 5, 6, 2]) == "the cat sat"
    with pytest.raises(DecodingError):
        decode(tiny_tok, [9999])


def test_roundtrip_1000_random_sentences():
    words = [f"w{i}" for i in range(50)]
    rng = random.Random(0)
    tok = train_tokenizer(corpus(" ".join(words)), 100)
    for _ in range(1000):
        s = " ".join(rng.choice(words) for _ in range(rng.randint(1, 20)))
        assert decode(tok, encode(tok, s, add_bos=True, add_eos=True)) == s


def test_deterministic_training():
    c = corpus("b a c a", "c c d e", "e f g h")
    assert train_tokenizer(c, 7) == train_tokenizer(c, 7)
    assert train_tokenizer(c, 12, "bpe") == train_tokenizer(c, 12, "bpe")


def test_json_roundtrip(tmp_path, tiny_tok):
    tiny_tok.save(tmp_path / "tok.json")
    assert Tokenizer.load(tmp_path / "tok.json") == tiny_tok
    bpe = train_tokenizer(corpus("lower lowest newer newest"), 20, "bpe")
    bpe.save(tmp_path / "bpe.json")
    assert Tokenizer.load(tmp_path / "bpe.json") == bpe


def test_bpe_covers_words_and_respects_budget():
    c = corpus("lower lowest newer newest", "low new wide")
    tok = train_tokenizer(c, 24, "bpe")
    assert len(tok) <= 24
    for w in "lower newest wide".split():
        assert tok.unk_id not in encode(tok, w)
    assert decode(tok, encode(tok, "lower wide")) == "lower wide"
