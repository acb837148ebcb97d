"""Word-level and byte-pair vocabularies with reversible encode/decode."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DecodingError

SPECIAL_TOKENS = ("<bos>", "<unk>", "<eos>", "<pad>")
END_OF_WORD = "</w>"
WORD = "word"
BPE = "bpe"


@dataclass(frozen=True)
class Tokenizer:
    tokens: tuple[str, ...]
    mode: str = WORD
    merges: tuple[tuple[str, str], ...] = ()
    vocab: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vocab", {t: i for i, t in enumerate(self.tokens)})
        if len(self.vocab) != len(self.tokens):
            raise ConfigError("duplicate token in vocabulary")
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ConfigError("special tokens must occupy the lowest ids")
        if any(t == "" for t in self.tokens):
            raise ConfigError("empty token in vocabulary")

    @property
    def inverse_vocab(self) -> dict[int, str]:
        return dict(enumerate(self.tokens))

    @property
    def special_ids(self) -> dict[str, int]:
        return {"bos": 0, "unk": 1, "eos": 2, "pad": 3}

    bos_id = 0
    unk_id = 1
    eos_id = 2
    pad_id = 3

    def __len__(self) -> int:
        return len(self.tokens)

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIAL_TOKENS)

    def to_json(self) -> dict:
        out = {
            "mode": self.mode,
            "specials": {name: i for name, i in self.special_ids.items()},
            "tokens": list(self.tokens),
        }
        if self.mode == BPE:
            out["merges"] = [list(m) for m in self.merges]
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, data: dict) -> "Tokenizer":
        if data.get("specials") != {"bos": 0, "unk": 1, "eos": 2, "pad": 3}:
            raise ConfigError(f"unsupported special-token layout {data.get('specials')}")
        merges = tuple(tuple(m) for m in data.get("merges", ()))
        return cls(tuple(data["tokens"]), data.get("mode", WORD), merges)

    @classmethod
    def load(cls, path) -> "Tokenizer":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_tokenizer(corpus, vocab_size: int = 8192, mode: str = WORD) -> Tokenizer:
    """Build a vocabulary of at most ``vocab_size`` ids, specials included.

    Word mode keeps the most frequent words, ties broken lexicographically.
    BPE mode starts from the characters of the corpus (each word carrying an
    end-of-word marker) and greedily merges the most frequent adjacent pair.
    """
    if vocab_size <= len(SPECIAL_TOKENS):
        raise ConfigError(f"vocab_size={vocab_size} leaves no room beside {len(SPECIAL_TOKENS)} special tokens")
    sentences = list(corpus)
    if not sentences:
        raise ConfigError("cannot train a tokenizer on an empty corpus")
    counts = Counter(w for s in sentences for w in s.split() if w not in SPECIAL_TOKENS)
    if mode == WORD:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        budget = vocab_size - len(SPECIAL_TOKENS)
        return Tokenizer(SPECIAL_TOKENS + tuple(w for w, _ in ranked[:budget]), WORD)
    if mode == BPE:
        return _train_bpe(counts, vocab_size)
    raise ConfigError(f"unknown tokenizer mode {mode!r}")


def _train_bpe(counts: Counter, vocab_size: int) -> Tokenizer:
    words = {w: tuple(w) + (END_OF_WORD,) for w in counts}
    alphabet = sorted({sym for seq in words.values() for sym in seq})
    tokens = list(SPECIAL_TOKENS) + alphabet
    if len(tokens) > vocab_size:
        # not even the alphabet fits; keep the most frequent characters
        char_freq = Counter()
        for w, c in counts.items():
            for sym in words[w]:
                char_freq[sym] += c
        kept = sorted(char_freq.items(), key=lambda kv: (-kv[1], kv[0]))[: vocab_size - len(SPECIAL_TOKENS)]
        return Tokenizer(SPECIAL_TOKENS + tuple(sorted(k for k, _ in kept)), BPE)
    merges = []
    while len(tokens) < vocab_size:
        pairs = Counter()
        for w, seq in words.items():
            for a, b in zip(seq, seq[1:]):
                pairs[a, b] += counts[w]
        if not pairs:
            break
        (a, b), _ = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        merged = a + b
        merges.append((a, b))
        if merged not in tokens:
            tokens.append(merged)
        words = {w: _merge(seq, a, b) for w, seq in words.items()}
    return Tokenizer(tuple(tokens), BPE, tuple(merges))


def _merge(seq, a, b):
    out = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def _bpe_word(tok: Tokenizer, word: str) -> list[int]:
    seq = tuple(word) + (END_OF_WORD,)
    for a, b in tok.merges:
        if len(seq) == 1:
            break
        seq = _merge(seq, a, b)
    return [tok.vocab.get(sym, tok.unk_id) for sym in seq]


def encode(tok: Tokenizer, text: str, add_bos: bool = False, add_eos: bool = False) -> list[int]:
    ids = [tok.bos_id] if add_bos else []
    for word in text.split():
        if tok.mode == BPE:
            ids.extend(_bpe_word(tok, word))
        else:
            ids.append(tok.vocab.get(word, tok.unk_id))
    if add_eos:
        ids.append(tok.eos_id)
    return ids


def decode(tok: Tokenizer, ids) -> str:
    pieces = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(tok.tokens):
            raise DecodingError(f"token id {i} outside vocabulary of size {len(tok.tokens)}")
        if tok.is_special(i):
            continue
        pieces.append(tok.tokens[i])
    if tok.mode == BPE:
        return "".join(pieces).replace(END_OF_WORD, " ").strip()
    return " ".join(pieces)
