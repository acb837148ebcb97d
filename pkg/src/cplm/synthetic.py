"""A small artificial language with number agreement, for fixtures and smoke runs.

Subjects agree with their main verb, demonstratives agree with their noun,
and prepositional phrases or relative clauses may separate a subject from
its verb with an attractor noun of the opposite number.
"""

from __future__ import annotations

import json
import random

NOUNS = [
    ("dog", "dogs"), ("cat", "cats"), ("bird", "birds"), ("boy", "boys"),
    ("girl", "girls"), ("horse", "horses"), ("frog", "frogs"), ("duck", "ducks"),
    ("king", "kings"), ("queen", "queens"), ("fox", "foxes"), ("bear", "bears"),
]
INTRANSITIVE = [("runs", "run"), ("sleeps", "sleep"), ("jumps", "jump"), ("sings", "sing"),
                ("swims", "swim"), ("falls", "fall")]
TRANSITIVE = [("sees", "see"), ("likes", "like"), ("chases", "chase"), ("finds", "find")]
ADJECTIVES = ["big", "small", "red", "happy", "old"]
PREPOSITIONS = ["near", "behind", "with"]
DEMONSTRATIVES = ("this", "these")


class Grammar:
    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def _np(self, plural: bool, det: str | None = None, adj_p: float = 0.3):
        rng = self.rng
        noun = rng.choice(NOUNS)[plural]
        words = [det or "the"]
        if rng.random() < adj_p:
            words.append(rng.choice(ADJECTIVES))
        return words + [noun]

    def _verb(self, table, plural: bool) -> str:
        return self.rng.choice(table)[plural]

    def local(self, plural: bool):
        subj = self._np(plural)
        return subj, len(subj), [self._verb(INTRANSITIVE, plural), "."]

    def across_pp(self, plural: bool):
        subj = self._np(plural) + [self.rng.choice(PREPOSITIONS)] + self._np(not plural, adj_p=0.0)
        return subj, len(subj), [self._verb(INTRANSITIVE, plural), "."]

    def across_relative(self, plural: bool):
        inner = self.rng.random() < 0.5
        subj = self._np(plural) + ["that"] + self._np(inner, adj_p=0.0) + [self._verb(TRANSITIVE, inner)]
        return subj, len(subj), [self._verb(INTRANSITIVE, plural), "."]

    def transitive(self, plural: bool):
        subj = self._np(plural)
        return subj, len(subj), [self._verb(TRANSITIVE, plural)] + self._np(self.rng.random() < 0.5) + ["."]

    def demonstrative(self, plural: bool):
        subj = self._np(plural, det=DEMONSTRATIVES[plural])
        return subj, len(subj), [self._verb(INTRANSITIVE, plural), "."]

    TEMPLATES = ("local", "across_pp", "across_relative", "transitive", "demonstrative")

    def sentence(self) -> str:
        template = self.rng.choice(self.TEMPLATES)
        subj, _, rest = getattr(self, template)(self.rng.random() < 0.5)
        return " ".join(subj + rest)


def generate_corpus(n_tokens: int = 50_000, seed: int = 0) -> list[str]:
    """Sentences until roughly ``n_tokens`` whitespace words have been produced."""
    g = Grammar(seed)
    out, total = [], 0
    while total < n_tokens:
        s = g.sentence()
        out.append(s)
        total += len(s.split())
    return out


def _flip_verb(rest: list[str], plural: bool) -> list[str]:
    for table in (INTRANSITIVE, TRANSITIVE):
        for forms in table:
            if rest[0] == forms[plural]:
                return [forms[not plural]] + rest[1:]
    raise ValueError(f"no verb at the head of {rest}")


def generate_minimal_pairs(n_pairs: int = 200, seed: int = 1) -> list[dict]:
    """Pairs split evenly over four subcategories in two categories."""
    g = Grammar(seed)
    kinds = [
        ("S-V AGR", "local", g.local),
        ("S-V AGR", "across_prepositional_phrase", g.across_pp),
        ("S-V AGR", "across_relative_clause", g.across_relative),
        ("D-N AGR", "demonstrative_noun", g.demonstrative),
    ]
    pairs, seen = [], set()
    i = attempts = 0
    while len(pairs) < n_pairs:
        category, sub, make = kinds[i % len(kinds)]
        plural = g.rng.random() < 0.5
        subj, _, rest = make(plural)
        good = " ".join(subj + rest)
        if category == "D-N AGR":
            bad = " ".join([DEMONSTRATIVES[not plural]] + subj[1:] + rest)
        else:
            bad = " ".join(subj + _flip_verb(rest, plural))
        attempts += 1
        if (good, bad) in seen and attempts < 100 * n_pairs:
            continue  # resample; the local template has a small space
        seen.add((good, bad))
        pairs.append({"category": category, "subcategory": sub, "good": good, "bad": bad})
        i += 1
    return pairs


def write_fixture(corpus_path, benchmark_path, n_tokens: int = 50_000, n_pairs: int = 200, seed: int = 0) -> None:
    with open(corpus_path, "w", encoding="utf-8") as fh:
        fh.writelines(s + "\n" for s in generate_corpus(n_tokens, seed))
    with open(benchmark_path, "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps(p) + "\n" for p in generate_minimal_pairs(n_pairs, seed + 1))
