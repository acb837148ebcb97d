"""Corpus ingestion, preprocessing, length-band filtering and length statistics.

A sentence is one input line; a word is a maximal run of non-whitespace
characters, so attached punctuation counts as part of its word while a
free-standing "." counts as a word of its own.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, CorpusEncodingError, EmptyCorpusError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LogEntry:
    transform: str
    n_in: int
    kept: int
    dropped: int


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[str, ...]
    source_name: str = ""
    preprocessing_log: tuple[LogEntry, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def n_words(self) -> int:
        return sum(word_count(s) for s in self.sentences)


@dataclass(frozen=True)
class LengthBand:
    min_words: int
    max_words: int

    def __post_init__(self):
        if self.min_words < 1:
            raise ConfigError(f"length band min_words must be >= 1, got {self.min_words}")
        if self.min_words > self.max_words:
            raise ConfigError(f"length band [{self.min_words},{self.max_words}] is empty")

    def __contains__(self, n_words: int) -> bool:
        return self.min_words <= n_words <= self.max_words

    def __str__(self) -> str:
        return f"[{self.min_words},{self.max_words}]"


def word_count(sentence: str) -> int:
    """Whitespace tokens holding at least one letter or digit.

    A free-standing "." or "?" is not a word; "ball." is one word.
    """
    return sum(any(ch.isalnum() for ch in tok) for tok in sentence.split())


def _normalize(line: str) -> str:
    return " ".join(line.split())


def _read_lines(path: Path) -> list[str]:
    raw = path.read_bytes()
    lines = []
    for i, chunk in enumerate(raw.split(b"\n"), start=1):
        try:
            text = chunk.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusEncodingError(path, i, exc.reason) from None
        lines.append(text.rstrip("\r"))
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def preprocess(lines, lowercase: bool = True, min_words: int = 3, source_name: str = "") -> Corpus:
    """Lowercase, then drop lines with fewer than ``min_words`` words."""
    sentences = [_normalize(line) for line in lines]
    log = []
    if lowercase:
        sentences = [s.lower() for s in sentences]
        log.append(LogEntry("lowercase", len(sentences), len(sentences), 0))
    kept = [s for s in sentences if word_count(s) >= min_words]
    log.append(LogEntry(f"min_words>={min_words}", len(sentences), len(kept), len(sentences) - len(kept)))
    return Corpus(tuple(kept), source_name, tuple(log))


def load_corpus(path, lowercase: bool = True, min_words: int = 3) -> Corpus:
    """Read a one-sentence-per-line UTF-8 file and preprocess it.

    Raises FileNotFoundError for a missing file, CorpusEncodingError naming
    the first undecodable line, and EmptyCorpusError when nothing survives.
    """
    path = Path(path)
    lines = _read_lines(path)
    corpus = preprocess(lines, lowercase=lowercase, min_words=min_words, source_name=path.name)
    if not corpus.sentences:
        raise EmptyCorpusError(f"empty corpus: no sentence in {path} has >= {min_words} words")
    dropped = corpus.preprocessing_log[-1].dropped
    logger.info("loaded %d sentences from %s (%d dropped)", len(corpus), path, dropped)
    return corpus


def filter_by_length(corpus: Corpus, band: LengthBand) -> Corpus:
    kept = tuple(s for s in corpus.sentences if word_count(s) in band)
    entry = LogEntry(f"length_band{band}", len(corpus), len(kept), len(corpus) - len(kept))
    if not kept:
        logger.warning("length band %s removed every sentence of %s", band, corpus.source_name)
    return Corpus(kept, corpus.source_name, corpus.preprocessing_log + (entry,))


def length_histogram(corpus: Corpus) -> dict[int, int]:
    return dict(sorted(Counter(word_count(s) for s in corpus.sentences).items()))


def write_length_histogram(hist: dict[int, int], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["length", "count"])
        for length, count in sorted(hist.items()):
            writer.writerow([length, count])


def write_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text("".join(s + "\n" for s in corpus.sentences), encoding="utf-8")
