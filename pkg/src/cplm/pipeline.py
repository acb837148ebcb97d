"""Experiment pipeline: preprocess, train every variant x seed, evaluate, analyze, tabulate.

Output layout under the configured output directory::

    config.resolved.yaml   tokenizer.json   manifest.json
    corpus/    train.txt, length_hist.csv, length_hist.svg
    runs/<variant>/seed_<k>/  train_record.jsonl, checkpoints/, eval/epoch_XX.json, status.json
    tables/    accuracy.csv, accuracy_by_seed.csv, significance.json, delta.csv,
               capacity_<variant>.csv, trajectory.csv, space_stats.csv, projection_<variant>.csv
    figures/   capacity.svg, trajectory.svg, embedding_<variant>.svg
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import hashlib
import json
import logging
import multiprocessing
import re
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from . import attention_bias as ab
from . import plotting
from .analysis import track_trajectory, write_projection_csv, write_space_stats_csv
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, Variant
from .corpus import filter_by_length, length_histogram, load_corpus, write_corpus, write_length_histogram
from .evaluation import (
    OVERALL,
    EvalReport,
    build_report,
    compare_reports,
    load_benchmark,
    merge_reports,
    report_columns,
    score_pairs,
    significance_marker,
    write_report_csv,
    write_report_json,
)
from .tokenizer import Tokenizer, train_tokenizer
from .trainer import TrainRunRecord, train

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    label: str
    seed: int
    status: str
    run_dir: str
    error: str | None = None
    epochs: int = 0
    stopped_early: bool = False


@dataclass
class ResultsBundle:
    out_dir: Path
    runs: list[RunResult] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def failures(self) -> list[RunResult]:
        return [r for r in self.runs if r.status != "ok"]


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def run_dir(cfg: ExperimentConfig, label: str, seed: int) -> Path:
    return cfg.output / "runs" / slug(label) / f"seed_{seed}"


def preprocess_stage(cfg: ExperimentConfig):
    """Load and filter the corpus, write its statistics and train the shared tokenizer."""
    out = cfg.output
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(cfg.corpus_path, lowercase=cfg.lowercase, min_words=cfg.min_words)
    if cfg.length_band is not None:
        corpus = filter_by_length(corpus, cfg.length_band)
    write_corpus(corpus, out / "corpus" / "train.txt")
    hist = length_histogram(corpus)
    write_length_histogram(hist, out / "corpus" / "length_hist.csv")
    plotting.plot_length_histogram(hist, out / "corpus" / "length_hist.svg", title=corpus.source_name)
    with open(out / "corpus" / "preprocessing_log.json", "w") as fh:
        json.dump([e.__dict__ for e in corpus.preprocessing_log], fh, indent=1)
    tok = train_tokenizer(corpus, cfg.vocab_size, cfg.tokenizer_mode)
    tok.save(out / "tokenizer.json")
    (out / "config.resolved.yaml").write_text(cfg.to_yaml())
    return corpus, tok


def _checkpoints(rdir: Path) -> list[Path]:
    return sorted((rdir / "checkpoints").glob("epoch_*.cplm"))


def evaluate_run(cfg: ExperimentConfig, rdir: Path, tok: Tokenizer, pairs, label: str, seed: int) -> list[EvalReport]:
    (rdir / "eval").mkdir(exist_ok=True)
    ckpts = _checkpoints(rdir)
    wanted = set(cfg.eval_epochs) if cfg.eval_epochs else None
    reports = []
    for i, path in enumerate(ckpts):
        ck = load_checkpoint(path)
        if wanted is not None and ck.epoch not in wanted and i != len(ckpts) - 1:
            continue
        model = ck.build()
        scored = score_pairs(model, tok, pairs, ck.inference_slopes, cfg.eval_lowercase)
        rep = build_report(scored, label, [seed], ck.epoch)
        write_report_json(rep, rdir / "eval" / f"epoch_{ck.epoch:02d}.json")
        reports.append(rep)
    return reports


def run_one(cfg: ExperimentConfig, variant: Variant, seed: int, corpus, tok: Tokenizer, pairs, threads: int | None = None) -> RunResult:
    """Train and evaluate one variant x seed; failures are captured, not raised."""
    if threads:
        torch.set_num_threads(threads)
    rdir = run_dir(cfg, variant.label, seed)
    rdir.mkdir(parents=True, exist_ok=True)
    try:
        model_cfg = cfg.model_config(variant, len(tok))
        record = train(model_cfg, variant.schedule, corpus, cfg.train, out_dir=rdir, seed=seed,
                       tokenizer=tok, label=variant.label)
        if pairs:
            evaluate_run(cfg, rdir, tok, pairs, variant.label, seed)
        result = RunResult(variant.label, seed, "ok", str(rdir), epochs=len(record.epochs),
                           stopped_early=record.stopped_early)
    except Exception as exc:  # one failed run must not sink the others
        logger.error("run %s seed=%d failed: %s", variant.label, seed, exc)
        result = RunResult(variant.label, seed, "failed", str(rdir), error=f"{type(exc).__name__}: {exc}")
        (rdir / "error.txt").write_text(traceback.format_exc())
    (rdir / "status.json").write_text(json.dumps(result.__dict__, indent=1, sort_keys=True) + "\n")
    return result


def train_stage(cfg: ExperimentConfig, corpus, tok: Tokenizer, pairs, variants=None) -> list[RunResult]:
    jobs = [(v, s) for v in (variants or cfg.variants) for s in cfg.train.seeds]
    if cfg.parallel <= 1 or len(jobs) == 1:
        return [run_one(cfg, v, s, corpus, tok, pairs) for v, s in jobs]
    ctx = multiprocessing.get_context("spawn")
    with cf.ProcessPoolExecutor(max_workers=cfg.parallel, mp_context=ctx) as pool:
        futures = [pool.submit(run_one, cfg, v, s, corpus, tok, pairs, 1) for v, s in jobs]
        return [f.result() for f in futures]


def load_run_reports(cfg: ExperimentConfig) -> dict[str, dict[int, dict[int, EvalReport]]]:
    """variant -> seed -> epoch -> report, read back from disk."""
    out = {}
    for v in cfg.variants:
        for seed in cfg.train.seeds:
            edir = run_dir(cfg, v.label, seed) / "eval"
            for path in sorted(edir.glob("epoch_*.json")):
                rep = EvalReport.from_json(json.loads(path.read_text()))
                out.setdefault(v.label, {}).setdefault(seed, {})[rep.epoch] = rep
    return out


def seed_average(reports: list[EvalReport], label: str) -> dict[str, float]:
    """Mean over seeds of each column's accuracy (OVERALL = mean of per-seed macro averages)."""
    cols = report_columns(reports)
    avg = {}
    for col in cols:
        vals = [r.overall if col == OVERALL else r.per_category[col].accuracy
                for r in reports if col == OVERALL or col in r.per_category]
        avg[col] = sum(vals) / len(vals)
    return avg


def _final_reports(per_seed: dict[int, dict[int, EvalReport]]) -> list[EvalReport]:
    return [epochs[max(epochs)] for _, epochs in sorted(per_seed.items()) if epochs]


def _fmt(acc: float) -> str:
    return f"{100 * acc:.1f}"


def write_accuracy_table(cfg: ExperimentConfig, all_reports, path, bundle: ResultsBundle) -> dict:
    """Seed-averaged final-epoch accuracies with markers against the reference variant."""
    ref_label = cfg.tables.get("reference")
    finals = {label: _final_reports(per_seed) for label, per_seed in all_reports.items()}
    finals = {k: v for k, v in finals.items() if v}
    pooled = {label: merge_reports(reps, label) for label, reps in finals.items()}
    cols = report_columns([r for reps in finals.values() for r in reps])
    significance = {}
    if ref_label not in pooled:
        bundle.notes.append(f"accuracy table: reference variant {ref_label!r} missing; no significance markers")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + cols)
        for v in cfg.variants:
            if v.label not in finals:
                bundle.notes.append(f"accuracy table: no results for variant {v.label!r}")
                continue
            avg = seed_average(finals[v.label], v.label)
            tests = {}
            if ref_label in pooled and v.label != ref_label:
                tests = compare_reports(pooled[v.label], pooled[ref_label])
                significance[f"{v.label} vs {ref_label}"] = _tests_json(tests)
            row = [v.label]
            for col in cols:
                if col not in avg:
                    row.append("")
                    continue
                mark = ""
                if col in tests:
                    diff = avg[col] - seed_average(finals[ref_label], ref_label).get(col, avg[col])
                    mark = significance_marker(tests[col], diff)
                row.append(_fmt(avg[col]) + mark)
            writer.writerow(row)
    return significance


def _tests_json(tests) -> dict:
    return {k: {"z": t.z, "p": t.p_two_sided, "significant": t.significant, "degenerate": t.degenerate}
            for k, t in tests.items()}


def write_seed_table(cfg: ExperimentConfig, all_reports, path) -> None:
    rows = []
    for v in cfg.variants:
        for seed, epochs in sorted(all_reports.get(v.label, {}).items()):
            if epochs:
                rows.append(replace(epochs[max(epochs)], model_label=f"{v.label}/seed_{seed}"))
    if rows:
        write_report_csv(rows, path)


def write_delta_table(cfg: ExperimentConfig, all_reports, path, bundle: ResultsBundle) -> dict | None:
    """Forward-vs-comparison rows plus a delta row, markers from the pooled z-test."""
    fwd = cfg.tables.get("proposed")
    rev = cfg.tables.get("reversed") or next(
        (v.label for v in cfg.variants if v.schedule.kind == ab.REVERSED_EXPONENTIAL), None)
    if rev is None:
        rev = cfg.tables.get("reference")
        bundle.notes.append(f"delta table: no reversed variant configured; comparing {fwd!r} with {rev!r}")
    finals = {k: _final_reports(all_reports.get(k, {})) for k in (fwd, rev)}
    missing = [k for k, reps in finals.items() if not reps]
    if missing:
        note = f"delta table omitted: missing variant(s) {missing}"
        bundle.notes.append(note)
        Path(path).write_text(f"# {note}\n")
        return None
    avg_f, avg_r = seed_average(finals[fwd], fwd), seed_average(finals[rev], rev)
    tests = compare_reports(merge_reports(finals[fwd]), merge_reports(finals[rev]))
    cols = [c for c in avg_f if c in avg_r]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + cols)
        writer.writerow([fwd] + [_fmt(avg_f[c]) for c in cols])
        writer.writerow([rev] + [_fmt(avg_r[c]) for c in cols])
        row = [f"delta ({fwd} - {rev})"]
        for c in cols:
            d = avg_f[c] - avg_r[c]
            row.append(f"{100 * d:.1f}" + (significance_marker(tests[c], d) if c in tests else ""))
        writer.writerow(row)
    return {f"{fwd} vs {rev}": _tests_json(tests)}


def write_capacity_tables(cfg: ExperimentConfig, tables: Path, figures: Path) -> None:
    curves = {}
    for v in cfg.variants:
        ab.write_capacity_csv(v.schedule, tables / f"capacity_{slug(v.label)}.csv")
        curves[v.label] = ab.capacity_curve(v.schedule)
    plotting.plot_capacity_curves(curves, figures / "capacity.svg")


def write_trajectory_table(cfg: ExperimentConfig, all_reports, path, figure) -> None:
    """Seed-averaged accuracy per variant, epoch and column (OVERALL included)."""
    series = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "epoch", "category", "accuracy"])
        for v in cfg.variants:
            per_seed = all_reports.get(v.label, {})
            epochs = sorted({e for eps in per_seed.values() for e in eps})
            for e in epochs:
                reps = [eps[e] for _, eps in sorted(per_seed.items()) if e in eps]
                for col, acc in seed_average(reps, v.label).items():
                    writer.writerow([v.label, e, col, f"{100 * acc:.2f}"])
                    series.setdefault(v.label, {}).setdefault(col, []).append((e, acc))
    plotting.plot_accuracy_trajectory(series, figure)


def analyze_stage(cfg: ExperimentConfig, tok: Tokenizer, pairs, bundle: ResultsBundle) -> list:
    tables, figures = cfg.output / "tables", cfg.output / "figures"
    tables.mkdir(parents=True, exist_ok=True)
    figures.mkdir(parents=True, exist_ok=True)
    an = cfg.analysis
    seed = cfg.train.seeds[0]
    trajectories = []
    for v in cfg.variants:
        ckpts = {load_checkpoint(p).epoch: p for p in _checkpoints(run_dir(cfg, v.label, seed))}
        epochs = [e for e in (an.get("epochs") or sorted(ckpts)) if e in ckpts]
        skipped = sorted(set(an.get("epochs") or []) - set(epochs))
        if skipped:
            bundle.notes.append(f"analysis of {v.label}: epochs {skipped} unavailable (run ended at {max(ckpts, default=0)})")
        if len(epochs) < 2:
            bundle.notes.append(f"analysis of {v.label}: fewer than two checkpoints; skipped")
            continue
        traj = track_trajectory([ckpts[e] for e in epochs], tok, pairs, an.get("categories"),
                                method=an["method"], bins_per_axis=an["bins_per_axis"], seed=an["seed"],
                                pool=an["pool"], label=v.label)
        write_projection_csv(traj, tables / f"projection_{slug(v.label)}.csv")
        plotting.plot_embedding_space(traj, figures / f"embedding_{slug(v.label)}.svg")
        trajectories.append(traj)
    if trajectories:
        write_space_stats_csv(trajectories, tables / "space_stats.csv")
    return trajectories


def emit_tables(cfg: ExperimentConfig, bundle: ResultsBundle | None = None) -> ResultsBundle:
    """Write every table and figure derivable from the run directories on disk."""
    bundle = bundle or ResultsBundle(cfg.output)
    tables, figures = cfg.output / "tables", cfg.output / "figures"
    tables.mkdir(parents=True, exist_ok=True)
    figures.mkdir(parents=True, exist_ok=True)
    write_capacity_tables(cfg, tables, figures)
    all_reports = load_run_reports(cfg)
    if not all_reports:
        bundle.notes.append("no evaluation reports found; accuracy tables omitted")
    else:
        significance = write_accuracy_table(cfg, all_reports, tables / "accuracy.csv", bundle)
        write_seed_table(cfg, all_reports, tables / "accuracy_by_seed.csv")
        delta = write_delta_table(cfg, all_reports, tables / "delta.csv", bundle)
        significance.update(delta or {})
        proposed = cfg.tables.get("proposed")
        finals = {k: _final_reports(v) for k, v in all_reports.items()}
        if finals.get(proposed):
            for other, reps in finals.items():
                key = f"{proposed} vs {other}"
                if other != proposed and reps and key not in significance:
                    significance[key] = _tests_json(compare_reports(merge_reports(finals[proposed]), merge_reports(reps)))
        (tables / "significance.json").write_text(json.dumps(significance, indent=1, sort_keys=True) + "\n")
        write_trajectory_table(cfg, all_reports, tables / "trajectory.csv", figures / "trajectory.svg")
    (tables / "notes.txt").write_text("".join(n + "\n" for n in bundle.notes))
    write_manifest(bundle)
    return bundle


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(bundle: ResultsBundle) -> Path:
    out = bundle.out_dir
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".tmp"):
            files[str(p.relative_to(out))] = sha256(p)
    bundle.files = files
    manifest = {
        "runs": [r.__dict__ for r in bundle.runs],
        "failures": [r.__dict__ for r in bundle.failures],
        "notes": bundle.notes,
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def collect_runs(cfg: ExperimentConfig) -> list[RunResult]:
    runs = []
    for v in cfg.variants:
        for seed in cfg.train.seeds:
            status = run_dir(cfg, v.label, seed) / "status.json"
            if status.is_file():
                runs.append(RunResult(**json.loads(status.read_text())))
            else:
                runs.append(RunResult(v.label, seed, "missing", str(run_dir(cfg, v.label, seed))))
    return runs


def run_experiment(cfg: ExperimentConfig) -> ResultsBundle:
    """Full pipeline. Every variant x seed is attempted; failures land in the manifest."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    corpus, tok = preprocess_stage(cfg)
    pairs = load_benchmark(cfg.benchmark_path) if cfg.benchmark_path else []
    bundle = ResultsBundle(cfg.output)
    bundle.runs = train_stage(cfg, corpus, tok, pairs)
    if pairs:
        analyze_stage(cfg, tok, pairs, bundle)
    else:
        bundle.notes.append("no benchmark configured; evaluation and analysis skipped")
    return emit_tables(cfg, bundle)


def read_record(cfg: ExperimentConfig, label: str, seed: int) -> TrainRunRecord:
    return TrainRunRecord.read_jsonl(run_dir(cfg, label, seed) / "train_record.jsonl", seed, label)
