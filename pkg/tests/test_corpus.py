import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cplm.corpus import (
    Corpus,
    LengthBand,
    filter_by_length,
    length_histogram,
    load_corpus,
    preprocess,
    write_corpus,
    write_length_histogram,
)
from cplm.errors import ConfigError, CorpusEncodingError, EmptyCorpusError


def write(tmp_path, text, name="c.txt", mode="w"):
    p = tmp_path / name
    if mode == "wb":
        p.write_bytes(text)
    else:
        p.write_text(text, encoding="utf-8")
    return p


def test_short_sentences_dropped(tmp_path):
    c = load_corpus(write(tmp_path, "Go up .\nwhere is the ball\n"))
    assert c.sentences == ("where is the ball",)


def test_lowercased(tmp_path):
    c = load_corpus(write(tmp_path, "The Cat Sat\n"))
    assert c.sentences == ("the cat sat",)


def test_empty_file_is_an_error(tmp_path):
    with pytest.raises(EmptyCorpusError, match="empty corpus"):
        load_corpus(write(tmp_path, ""))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_corpus(tmp_path / "absent.txt")


def test_bad_utf8_names_the_line(tmp_path):
    p = write(tmp_path, b"one two three\nfour \xff five six\n", mode="wb")
    with pytest.raises(CorpusEncodingError) as info:
        load_corpus(p)
    assert info.value.line_no == 2


def test_crlf_and_log_counts(tmp_path):
    c = load_corpus(write(tmp_path, "a b c\r\nA B\r\nd e f g\r\n"))
    assert c.sentences == ("a b c", "d e f g")
    for entry in c.preprocessing_log:
        assert entry.kept + entry.dropped == entry.n_in
    assert [e.transform for e in c.preprocessing_log] == ["lowercase", "min_words>=3"]


def test_load_is_idempotent(tmp_path):
    first = load_corpus(write(tmp_path, "The DOG runs\nno\nA b C d\n"))
    out = tmp_path / "again.txt"
    write_corpus(first, out)
    assert load_corpus(out).sentences == first.sentences


@pytest.mark.parametrize("n_words,kept", [(4, False), (5, True), (10, True), (11, False)])
def test_band_boundaries(n_words, kept):
    c = Corpus((" ".join(["w"] * n_words),), "t")
    assert (len(filter_by_length(c, LengthBand(5, 10))) == 1) is kept


def test_identity_band():
    c = Corpus(("a b c", "a b c d e f"), "t")
    assert filter_by_length(c, LengthBand(1, 10**9)).sentences == c.sentences


@pytest.mark.parametrize("lo,hi", [(0, 3), (5, 4)])
def test_invalid_band(lo, hi):
    with pytest.raises(ConfigError):
        LengthBand(lo, hi)


def test_histogram_examples(tmp_path):
    assert length_histogram(Corpus(("a b c", "a b c d"), "t")) == {3: 1, 4: 1}
    assert length_histogram(Corpus((), "t")) == {}
    assert length_histogram(Corpus(("a b c d e",) * 100, "t")) == {5: 100}
    write_length_histogram({3: 1, 4: 2}, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "length,count\n3,1\n4,2\n"


words = st.lists(st.sampled_from(["a", "Bb", "cc", "D.", "e"]), min_size=0, max_size=12)


@settings(max_examples=100, deadline=None)
@given(st.lists(words.map(" ".join), max_size=30), st.integers(1, 6), st.integers(0, 8))
def test_corpus_properties(lines, lo, width):
    c = preprocess(lines, lowercase=True, min_words=3)
    assert all(len(s.split()) >= 3 and s == s.lower() for s in c.sentences)
    assert sum(length_histogram(c).values()) == len(c)
    sub = filter_by_length(c, LengthBand(lo, lo + width))
    it = iter(c.sentences)
    assert all(any(s == t for t in it) for s in sub.sentences)  # subsequence


@pytest.mark.parametrize("text,n", [("go up .", 2), ("where is it ?", 3), ("ball. is red", 3), ("a b c", 3)])
def test_word_count_ignores_bare_punctuation(text, n):
    from cplm.corpus import word_count

    assert word_count(text) == n
