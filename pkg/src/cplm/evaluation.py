"""Minimal-pair benchmarks: loading, scoring, per-category reports and z-tests.

A pair is scored correct when the acceptable sentence receives a strictly
higher log-probability than the unacceptable one; ties count as incorrect.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from scipy.stats import norm

from .errors import BenchmarkParseError, ContractViolation, EmptyCorpusError
from .model import pad_batch, slopes_tensor
from .tokenizer import Tokenizer, encode

logger = logging.getLogger(__name__)

# column order of the published accuracy table
CATEGORY_ORDER = (
    "D-N AGR", "S-V AGR", "ANA.AGR", "ARG.STR", "BINDING", "CASE", "ELLIPSIS",
    "FILLER.GAP", "IRREGULAR", "ISLAND", "LOCAL.ATR", "QUANTIFIERS", "NPI",
)
OVERALL = "OVERALL"


def normalize_category(label: str) -> str:
    label = " ".join(label.upper().split())
    return re.sub(r"\.\s+", ".", label)


@dataclass(frozen=True)
class MinimalPair:
    category: str
    subcategory: str
    good: str
    bad: str

    def __post_init__(self):
        if not self.good.strip() or not self.bad.strip():
            raise ContractViolation("minimal pair sentences must be non-empty")
        if self.good == self.bad:
            raise ContractViolation(f"identical sentences in pair: {self.good!r}")

    def swapped(self) -> "MinimalPair":
        return MinimalPair(self.category, self.subcategory, self.bad, self.good)


@dataclass(frozen=True)
class ScoredPair:
    pair: MinimalPair
    logp_good: float | None
    logp_bad: float | None
    skipped: bool = False

    @property
    def correct(self) -> bool:
        return not self.skipped and self.logp_good > self.logp_bad


@dataclass(frozen=True)
class CategoryScore:
    accuracy: float
    n_pairs: int
    n_correct: int
    n_skipped: int = 0


@dataclass
class EvalReport:
    per_category: dict[str, CategoryScore]
    model_label: str = ""
    seed_set: list[int] = field(default_factory=list)
    epoch: int | None = None

    @property
    def overall(self) -> float:
        scored = [c.accuracy for c in self.per_category.values() if c.n_pairs]
        return sum(scored) / len(scored) if scored else float("nan")

    @property
    def n_correct(self) -> int:
        return sum(c.n_correct for c in self.per_category.values())

    @property
    def n_pairs(self) -> int:
        return sum(c.n_pairs for c in self.per_category.values())

    def to_json(self) -> dict:
        return {
            "model_label": self.model_label,
            "seed_set": list(self.seed_set),
            "epoch": self.epoch,
            "overall": self.overall,
            "per_category": {k: asdict(v) for k, v in self.per_category.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalReport":
        cats = {k: CategoryScore(**v) for k, v in data["per_category"].items()}
        return cls(cats, data.get("model_label", ""), list(data.get("seed_set", [])), data.get("epoch"))


def load_benchmark(path) -> list[MinimalPair]:
    """Read a JSON-lines benchmark (one pair object per line)."""
    path = Path(path)
    pairs = []
    seen = Counter()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pair = MinimalPair(
                    normalize_category(rec["category"]),
                    rec.get("subcategory", ""),
                    rec["good"],
                    rec["bad"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ContractViolation) as exc:
                raise BenchmarkParseError(path, line_no, f"malformed record ({exc})") from None
            seen[pair] += 1
            if seen[pair] == 2:
                warnings.warn(f"{path}:{line_no}: duplicate pair kept: {pair.good!r} / {pair.bad!r}")
            pairs.append(pair)
    if not pairs:
        raise EmptyCorpusError(f"empty benchmark: {path}")
    counts = Counter((p.category, p.subcategory) for p in pairs)
    for (cat, sub), n in sorted(counts.items()):
        logger.debug("%s / %s: %d pairs", cat, sub, n)
    return pairs


def convert_alternating(path, category: str, subcategory: str = "", good_first: bool = False) -> list[MinimalPair]:
    """Pairs from a plain-text file whose lines alternate between the two members.

    With ``good_first`` false the odd lines (1, 3, ...) are the unacceptable ones.
    """
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) % 2:
        raise BenchmarkParseError(path, len(lines), "odd number of sentences in alternating file")
    pairs = []
    for i in range(0, len(lines), 2):
        first, second = lines[i], lines[i + 1]
        good, bad = (first, second) if good_first else (second, first)
        try:
            pairs.append(MinimalPair(normalize_category(category), subcategory, good, bad))
        except ContractViolation as exc:
            raise BenchmarkParseError(path, i + 1, str(exc)) from None
    if not pairs:
        raise EmptyCorpusError(f"empty benchmark: {path}")
    return pairs


def write_benchmark(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(asdict(p), ensure_ascii=False) + "\n")


def _encode_sentence(tok: Tokenizer, text: str, lowercase: bool) -> list[int]:
    return encode(tok, text.lower() if lowercase else text, add_bos=True, add_eos=True)


def batch_log_probs(model, seqs, slopes=None, pad_id: int = 3, batch_size: int = 256) -> list[float]:
    """Sequence log-probabilities (BOS-conditioned, natural log) for many sequences."""
    s_t = slopes_tensor(model, slopes)
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for i in range(0, len(seqs), batch_size):
                chunk = seqs[i : i + batch_size]
                ids = pad_batch(chunk, pad_id, model.config.max_seq_len)
                logp = torch.log_softmax(model(ids, s_t)[:, :-1].double(), dim=-1)
                tgt = ids[:, 1:]
                lp = logp.gather(2, tgt[..., None])[..., 0]
                lengths = torch.as_tensor([len(s) - 1 for s in chunk])
                mask = torch.arange(tgt.shape[1])[None, :] < lengths[:, None]
                out.extend((lp * mask).sum(dim=1).tolist())
    finally:
        model.train(was_training)
    return out


def score_pairs(model, tok: Tokenizer, pairs, slopes=None, lowercase: bool = True) -> list[ScoredPair]:
    """Score every pair; pairs with an over-length member are marked skipped."""
    max_len = model.config.max_seq_len
    encoded = []
    for p in pairs:
        g, b = _encode_sentence(tok, p.good, lowercase), _encode_sentence(tok, p.bad, lowercase)
        encoded.append((g, b) if len(g) <= max_len and len(b) <= max_len else None)
    flat = [s for e in encoded if e for s in e]
    scores = iter(batch_log_probs(model, flat, slopes, tok.pad_id))
    results = []
    for p, e in zip(pairs, encoded):
        if e is None:
            results.append(ScoredPair(p, None, None, skipped=True))
        else:
            results.append(ScoredPair(p, next(scores), next(scores)))
    n_skipped = sum(r.skipped for r in results)
    if n_skipped:
        logger.warning("%d of %d pairs skipped: longer than max_seq_len=%d", n_skipped, len(pairs), max_len)
    return results


def score_pair(model, tok: Tokenizer, pair: MinimalPair, slopes=None, lowercase: bool = True) -> ScoredPair:
    return score_pairs(model, tok, [pair], slopes, lowercase)[0]


def build_report(results, model_label: str = "", seed_set=(), epoch=None) -> EvalReport:
    """Per-category accuracy over non-skipped pairs; overall is their unweighted mean."""
    buckets = defaultdict(lambda: [0, 0, 0])
    for r in sorted(results, key=lambda r: (r.pair.category, r.pair.subcategory)):
        b = buckets[r.pair.category]
        if r.skipped:
            b[2] += 1
        else:
            b[0] += 1
            b[1] += r.correct
    if not buckets:
        raise ContractViolation("no categories to report")
    per_category = {
        cat: CategoryScore(n_correct / n if n else float("nan"), n, n_correct, skipped)
        for cat, (n, n_correct, skipped) in sorted(buckets.items(), key=lambda kv: category_sort_key(kv[0]))
    }
    return EvalReport(per_category, model_label, list(seed_set), epoch)


def category_sort_key(category: str):
    if category in CATEGORY_ORDER:
        return (0, CATEGORY_ORDER.index(category), category)
    return (1, 0, category)


def merge_reports(reports, model_label: str = "") -> EvalReport:
    """Pool raw counts across reports (e.g. seeds) into one report."""
    buckets = defaultdict(lambda: [0, 0, 0])
    seeds = []
    for rep in reports:
        seeds.extend(rep.seed_set)
        for cat, c in rep.per_category.items():
            b = buckets[cat]
            b[0] += c.n_pairs
            b[1] += c.n_correct
            b[2] += c.n_skipped
    per_category = {
        cat: CategoryScore(k / n if n else float("nan"), n, k, s)
        for cat, (n, k, s) in sorted(buckets.items(), key=lambda kv: category_sort_key(kv[0]))
    }
    return EvalReport(per_category, model_label, seeds)


@dataclass(frozen=True)
class ZTest:
    z: float | None
    p_two_sided: float
    significant: bool
    degenerate: bool = False


def z_test_proportions(n_correct_a: int, n_a: int, n_correct_b: int, n_b: int, alpha: float = 0.05) -> ZTest:
    """Pooled two-proportion z-test, two-sided.

    When the pooled proportion is 0 or 1 the variance vanishes: z is None and
    the result is flagged degenerate, significant iff the proportions differ.
    """
    if n_a < 1 or n_b < 1:
        raise ContractViolation("both samples need at least one trial")
    if not (0 <= n_correct_a <= n_a and 0 <= n_correct_b <= n_b):
        raise ContractViolation("counts must lie within [0, total]")
    p_a, p_b = n_correct_a / n_a, n_correct_b / n_b
    pooled = (n_correct_a + n_correct_b) / (n_a + n_b)
    var = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if var == 0.0:
        differ = p_a != p_b
        return ZTest(None, 0.0 if differ else 1.0, differ, degenerate=True)
    z = (p_a - p_b) / math.sqrt(var)
    p = float(2.0 * norm.sf(abs(z)))
    return ZTest(z, p, p < alpha)


def significance_marker(test: ZTest, a_minus_b: float, better: str = "*", worse: str = "†") -> str:
    if not test.significant:
        return ""
    return better if a_minus_b > 0 else worse


def compare_reports(a: EvalReport, b: EvalReport, alpha: float = 0.05) -> dict[str, ZTest]:
    """z-tests of ``a`` against ``b`` per shared category plus pooled overall counts."""
    out = {}
    shared = [c for c in a.per_category if c in b.per_category]
    for cat in shared:
        ca, cb = a.per_category[cat], b.per_category[cat]
        if ca.n_pairs and cb.n_pairs:
            out[cat] = z_test_proportions(ca.n_correct, ca.n_pairs, cb.n_correct, cb.n_pairs, alpha)
    na = sum(a.per_category[c].n_pairs for c in shared)
    nb = sum(b.per_category[c].n_pairs for c in shared)
    if na and nb:
        out[OVERALL] = z_test_proportions(
            sum(a.per_category[c].n_correct for c in shared), na,
            sum(b.per_category[c].n_correct for c in shared), nb, alpha,
        )
    return out


def report_columns(reports) -> list[str]:
    cats = {c for r in reports for c in r.per_category}
    return [OVERALL] + sorted(cats, key=category_sort_key)


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")


def write_report_csv(reports, path, markers: dict | None = None) -> None:
    """One row per report, accuracies in percent, columns in the published order."""
    reports = list(reports)
    cols = report_columns(reports)
    markers = markers or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + cols)
        for rep in reports:
            row = [rep.model_label]
            for col in cols:
                acc = rep.overall if col == OVERALL else (
                    rep.per_category[col].accuracy if col in rep.per_category else float("nan"))
                row.append(f"{100 * acc:.1f}{markers.get(rep.model_label, {}).get(col, '')}")
            writer.writerow(row)
