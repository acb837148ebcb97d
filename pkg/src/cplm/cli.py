"""Command-line entry point: ``cplm <subcommand> --config PATH [options]``.

Exit codes: 0 success, 2 invalid config or arguments, 3 some runs failed,
4 file-system failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PROFILES, build_config, validate_config
from .errors import CplmError, ConfigValidationError
from .evaluation import load_benchmark
from .synthetic import write_fixture
from .tokenizer import Tokenizer

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("cplm")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cplm", description="Recency-bias schedule experiments for small language models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=needs_config, help="YAML experiment config")
        p.add_argument("--profile", choices=sorted(PROFILES), help="preset supplying defaults")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--out", type=Path, help="output directory (CPLM_OUT also overrides)")
        p.add_argument("--parallel", type=int, help="concurrent variant x seed runs")
        return p

    add("preprocess", "clean the corpus, write length statistics and the tokenizer")
    p = add("train", "train every variant x seed (no evaluation)")
    p.add_argument("--variant", action="append", help="restrict to these variant labels")
    p = add("eval", "score saved checkpoints on the minimal-pair benchmark")
    p.add_argument("--variant", action="append", help="restrict to these variant labels")
    add("analyze", "embedding-space statistics for the configured epochs")
    add("run", "full pipeline: preprocess, train, eval, analyze, report")
    add("curves", "write slope and capacity curves only", needs_config=False)
    add("report", "rebuild tables and figures from an existing output directory")

    syn = sub.add_parser("synth", help="write a synthetic agreement corpus and benchmark")
    syn.add_argument("--out", type=Path, required=True, help="directory for corpus.txt and pairs.jsonl")
    syn.add_argument("--tokens", type=int, default=50_000)
    syn.add_argument("--pairs", type=int, default=200)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args, require_corpus: bool = True):
    if args.config is None:
        cfg = build_config({}, profile=args.profile, require_corpus=False, output=args.out)
    else:
        cfg = validate_config(args.config, profile=args.profile, require_corpus=require_corpus, output=args.out)
    if args.seeds:
        cfg = cfg.with_seeds(args.seeds)
    if args.parallel is not None:
        if args.parallel < 1:
            raise ConfigValidationError([f"--parallel must be >= 1, got {args.parallel}"])
        cfg.parallel = args.parallel
    return cfg


def _selected(cfg, labels):
    if not labels:
        return cfg.variants
    unknown = [lab for lab in labels if cfg.variant(lab) is None]
    if unknown:
        raise ConfigValidationError([f"--variant: unknown label {lab!r}" for lab in unknown])
    return [cfg.variant(lab) for lab in labels]


def _tokenizer(cfg) -> Tokenizer:
    path = cfg.output / "tokenizer.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path} missing; run `cplm preprocess` first")
    return Tokenizer.load(path)


def _finish(bundle: pipeline.ResultsBundle) -> int:
    for r in bundle.failures:
        print(f"FAILED {r.label} seed={r.seed}: {r.error}", file=sys.stderr)
    for note in bundle.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {len(bundle.files)} files under {bundle.out_dir}")
    return EXIT_PARTIAL if bundle.failures else EXIT_OK


def cmd_preprocess(cfg, args) -> int:
    corpus, tok = pipeline.preprocess_stage(cfg)
    print(f"{len(corpus)} sentences, {corpus.n_words()} words, vocabulary {len(tok)} -> {cfg.output}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    corpus, tok = pipeline.preprocess_stage(cfg)
    runs = pipeline.train_stage(cfg, corpus, tok, [], _selected(cfg, args.variant))
    bundle = pipeline.ResultsBundle(cfg.output, runs)
    pipeline.write_manifest(bundle)
    return _finish(bundle)


def cmd_eval(cfg, args) -> int:
    if cfg.benchmark_path is None:
        raise ConfigValidationError(["eval.benchmark: required for `eval`"])
    tok = _tokenizer(cfg)
    pairs = load_benchmark(cfg.benchmark_path)
    failed = 0
    for v in _selected(cfg, args.variant):
        for seed in cfg.train.seeds:
            rdir = pipeline.run_dir(cfg, v.label, seed)
            if not (rdir / "checkpoints").is_dir():
                print(f"FAILED {v.label} seed={seed}: no checkpoints in {rdir}", file=sys.stderr)
                failed += 1
                continue
            for rep in pipeline.evaluate_run(cfg, rdir, tok, pairs, v.label, seed):
                print(f"{v.label} seed={seed} epoch={rep.epoch} overall={100 * rep.overall:.1f}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_analyze(cfg, args) -> int:
    if cfg.benchmark_path is None:
        raise ConfigValidationError(["eval.benchmark: required for `analyze`"])
    bundle = pipeline.ResultsBundle(cfg.output)
    (cfg.output / "tables").mkdir(parents=True, exist_ok=True)
    (cfg.output / "figures").mkdir(parents=True, exist_ok=True)
    trajs = pipeline.analyze_stage(cfg, _tokenizer(cfg), load_benchmark(cfg.benchmark_path), bundle)
    for t in trajs:
        print(t.label, json.dumps({k: round(v, 4) for k, v in t.table_row().items()}))
    for note in bundle.notes:
        print(f"note: {note}", file=sys.stderr)
    return EXIT_OK


def cmd_run(cfg, args) -> int:
    return _finish(pipeline.run_experiment(cfg))


def cmd_curves(cfg, args) -> int:
    tables, figures = cfg.output / "tables", cfg.output / "figures"
    tables.mkdir(parents=True, exist_ok=True)
    figures.mkdir(parents=True, exist_ok=True)
    pipeline.write_capacity_tables(cfg, tables, figures)
    print(f"capacity curves for {len(cfg.variants)} variants -> {tables}")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    if not cfg.output.is_dir():
        raise FileNotFoundError(f"output directory not found: {cfg.output}")
    bundle = pipeline.ResultsBundle(cfg.output, pipeline.collect_runs(cfg))
    return _finish(pipeline.emit_tables(cfg, bundle))


def cmd_synth(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    write_fixture(args.out / "corpus.txt", args.out / "pairs.jsonl", args.tokens, args.pairs, args.seed)
    print(f"wrote {args.out / 'corpus.txt'} and {args.out / 'pairs.jsonl'}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "run": cmd_run,
    "curves": cmd_curves,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, which matches our convention
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(args, require_corpus=args.command in ("preprocess", "train", "run"))
        return COMMANDS[args.command](cfg, args)
    except ConfigValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CplmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
