"""Experiment configuration: YAML schema, shipped profiles and validation.

A config file is a YAML mapping with ``config_version: 1``. Any key left
out is taken from the selected profile (``paper-main`` unless the file or
the command line names another); unknown keys are rejected.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attention_bias import EXPONENTIAL, KINDS, LINEAR, NONE, REVERSED_EXPONENTIAL, STATIC, ScheduleSpec
from .corpus import LengthBand
from .errors import ConfigError, ConfigValidationError
from .model import LEARNED, NO_POSITIONS, ModelConfig
from .trainer import TrainConfig

CONFIG_VERSION = 1

# per-kind variant defaults; a variant may override any of them
VARIANT_DEFAULTS = {
    NONE: {},
    STATIC: {"m0": 1.0},
    LINEAR: {"m0": 1.0},
    EXPONENTIAL: {"m0": 1.0, "r": 0.6},
    REVERSED_EXPONENTIAL: {"m0": 0.01, "r": 1.668},
}

PAPER_VARIANTS = [
    {"label": "NoLimit", "kind": NONE},
    {"label": "StaticLimit", "kind": STATIC},
    {"label": "DynamicLimit-Linear", "kind": LINEAR},
    {"label": "DynamicLimit-Exp", "kind": EXPONENTIAL},
]

_PAPER_MAIN = {
    "config_version": CONFIG_VERSION,
    "output": "cplm-out",
    "parallel": 1,
    "corpus": {"train": None, "lowercase": True, "min_words": 3, "length_band": None},
    "tokenizer": {"mode": "word", "vocab_size": 8192},
    "model": {"n_layers": 4, "n_heads": 4, "d_model": 256, "d_ff": None, "max_seq_len": 32,
              "dropout": 0.1, "tied_embeddings": True},
    "train": {"lr": 5e-6, "weight_decay": 0.01, "betas": [0.9, 0.999], "eps": 1e-8, "batch_size": 512,
              "grad_accum_steps": 2, "total_epochs": 10, "warmup_fraction": 0.1,
              "lr_schedule": "cosine_with_restarts", "n_cycles": 1, "max_grad_norm": 1.0,
              "early_stop_tolerance_epochs": 1, "eval_split_fraction": 0.05, "seeds": [0, 1, 2]},
    "schedule": {"horizon": 10, "uniform_slope": False, "snap_final_to_zero": False},
    "variants": PAPER_VARIANTS,
    "eval": {"benchmark": None, "epochs": None, "lowercase": True},
    "analysis": {"categories": None, "method": "pca", "bins_per_axis": 50, "epochs": [1, 5, 10],
                 "pool": "mean", "seed": 0},
    "tables": {"reference": "NoLimit", "proposed": "DynamicLimit-Exp", "reversed": None},
}


def _derive(base: dict, **sections) -> dict:
    out = copy.deepcopy(base)
    for key, value in sections.items():
        if isinstance(value, dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


PROFILES = {
    "paper-main": _PAPER_MAIN,
    "table-6": _derive(_PAPER_MAIN, train={"total_epochs": 20}),
    "length-bands": _derive(
        _PAPER_MAIN,
        corpus={"length_band": [11, 50]},
        model={"max_seq_len": 152},
        variants=[{"label": "NoLimit", "kind": NONE}, {"label": "DynamicLimit-Exp", "kind": EXPONENTIAL}],
    ),
    "desk-scale": _derive(
        _PAPER_MAIN,
        model={"n_layers": 2, "d_model": 64},
        train={"batch_size": 32, "lr": 1e-3, "seeds": [0]},
        analysis={"epochs": [1, 5, 10]},
    ),
}

VARIANT_KEYS = {"label", "kind", "m0", "r", "horizon", "uniform_slope", "snap_final_to_zero"}
OPTIONAL_KEYS = {("profile",)}


@dataclass(frozen=True)
class Variant:
    label: str
    schedule: ScheduleSpec


@dataclass
class ExperimentConfig:
    profile: str
    corpus_path: Path
    lowercase: bool
    min_words: int
    length_band: LengthBand | None
    tokenizer_mode: str
    vocab_size: int
    model: dict
    train: TrainConfig
    variants: list[Variant]
    benchmark_path: Path | None
    eval_epochs: list[int] | None
    eval_lowercase: bool
    analysis: dict
    tables: dict
    output: Path
    parallel: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    def model_config(self, variant: Variant, vocab_size: int) -> ModelConfig:
        positional = LEARNED if variant.schedule.kind == NONE else NO_POSITIONS
        return ModelConfig(vocab_size=vocab_size, positional=positional, **self.model)

    def variant(self, label: str) -> Variant | None:
        return next((v for v in self.variants if v.label == label), None)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        cfg = copy.copy(self)
        cfg.raw = copy.deepcopy(self.raw)
        cfg.raw["train"]["seeds"] = [int(s) for s in seeds]
        tr = cfg.raw["train"]
        cfg.train = TrainConfig(**{**tr, "betas": tuple(tr["betas"]), "seeds": tuple(tr["seeds"])})
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _merge(base, override, path, problems):
    if not isinstance(override, dict):
        problems.append(f"{'.'.join(path) or '<root>'}: expected a mapping")
        return base
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = path + (str(key),)
        if key not in base and where not in OPTIONAL_KEYS:
            problems.append(f"unknown key '{'.'.join(where)}'")
            continue
        if isinstance(base.get(key), dict) and key not in ("variants",):
            out[key] = _merge(base[key], value, where, problems)
        else:
            out[key] = value
    return out


def _check(problems, prefix, fn):
    try:
        return fn()
    except ConfigError as exc:
        problems.extend(f"{prefix}: {p}" for p in str(exc).split("; "))
    except (TypeError, ValueError) as exc:
        problems.append(f"{prefix}: {exc}")
    return None


def _resolve(p, base_dir: Path) -> Path | None:
    if p is None:
        return None
    p = Path(os.path.expanduser(str(p)))
    return p if p.is_absolute() else (base_dir / p)


def build_config(data: dict, base_dir=".", profile: str | None = None, check_files: bool = True,
                 require_corpus: bool = True, output=None) -> ExperimentConfig:
    """Resolve a raw mapping against its profile and validate every field.

    The output directory is ``output`` if given, else $CPLM_OUT, else the
    config's ``output`` key resolved against ``base_dir``.
    """
    problems = []
    if not isinstance(data, dict):
        raise ConfigValidationError(["config root must be a mapping"])
    base_dir = Path(base_dir)
    version = data.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        problems.append(f"config_version must be {CONFIG_VERSION}, got {version!r}")
    name = profile or data.get("profile") or "paper-main"
    if name not in PROFILES:
        raise ConfigValidationError([f"unknown profile {name!r} (known: {', '.join(PROFILES)})"])
    raw = _merge(PROFILES[name], data, (), problems)
    raw["profile"] = name

    c, tk, m, tr, sch, ev, an = (raw[k] for k in ("corpus", "tokenizer", "model", "train", "schedule", "eval", "analysis"))
    corpus_path = _resolve(c.get("train"), base_dir)
    if corpus_path is None and require_corpus:
        problems.append("corpus.train: a training corpus path is required")
    elif corpus_path is not None and check_files and not corpus_path.is_file():
        problems.append(f"corpus.train: file not found: {corpus_path}")
    band = None
    if c.get("length_band") is not None:
        lb = c["length_band"]
        if not (isinstance(lb, (list, tuple)) and len(lb) == 2):
            problems.append("corpus.length_band: expected [min_words, max_words]")
        else:
            band = _check(problems, "corpus.length_band", lambda: LengthBand(int(lb[0]), int(lb[1])))
    if not isinstance(c.get("min_words"), int) or c["min_words"] < 1:
        problems.append(f"corpus.min_words: must be a positive integer, got {c.get('min_words')!r}")
    if tk["mode"] not in ("word", "bpe"):
        problems.append(f"tokenizer.mode: must be 'word' or 'bpe', got {tk['mode']!r}")
    if not isinstance(tk["vocab_size"], int) or tk["vocab_size"] <= 4:
        problems.append(f"tokenizer.vocab_size: must be an integer > 4, got {tk['vocab_size']!r}")
    _check(problems, "model", lambda: ModelConfig(vocab_size=max(int(tk["vocab_size"]), 1), positional=NO_POSITIONS, **m))
    train_cfg = _check(problems, "train", lambda: TrainConfig(**{**tr, "betas": tuple(tr["betas"]), "seeds": tuple(tr["seeds"])}))

    variants = []
    if not isinstance(raw["variants"], list) or not raw["variants"]:
        problems.append("variants: at least one variant is required")
    else:
        labels = []
        for i, v in enumerate(raw["variants"]):
            if not isinstance(v, dict):
                problems.append(f"variants[{i}]: expected a mapping")
                continue
            for key in sorted(set(v) - VARIANT_KEYS):
                problems.append(f"unknown key 'variants[{i}].{key}'")
            kind = v.get("kind")
            if kind not in KINDS:
                problems.append(f"variants[{i}].kind: unknown schedule kind {kind!r}")
                continue
            label = str(v.get("label", kind))
            labels.append(label)
            spec_args = {"kind": kind, **VARIANT_DEFAULTS[kind], **sch,
                         **{k: v[k] for k in v if k in VARIANT_KEYS - {"label", "kind"}}}
            spec = _check(problems, f"variants[{i}] ({label})", lambda: ScheduleSpec(**spec_args))
            if spec is not None:
                variants.append(Variant(label, spec))
        dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
        if dupes:
            problems.append(f"variants: duplicate labels {dupes}")

    bench = _resolve(ev.get("benchmark"), base_dir)
    if bench is not None and check_files and not bench.is_file():
        problems.append(f"eval.benchmark: file not found: {bench}")
    if an["method"] not in ("pca", "tsne"):
        problems.append(f"analysis.method: must be 'pca' or 'tsne', got {an['method']!r}")
    if an["pool"] not in ("mean", "last"):
        problems.append(f"analysis.pool: must be 'mean' or 'last', got {an['pool']!r}")
    output = Path(output or os.environ.get("CPLM_OUT") or _resolve(raw["output"], base_dir))
    probe = output
    while not probe.exists() and probe != probe.parent:
        probe = probe.parent
    if not os.access(probe, os.W_OK):
        problems.append(f"output: directory not writable: {output}")
    if not isinstance(raw["parallel"], int) or raw["parallel"] < 1:
        problems.append(f"parallel: must be a positive integer, got {raw['parallel']!r}")
    if problems:
        raise ConfigValidationError(problems)
    return ExperimentConfig(
        profile=name,
        corpus_path=corpus_path,
        lowercase=bool(c["lowercase"]),
        min_words=c["min_words"],
        length_band=band,
        tokenizer_mode=tk["mode"],
        vocab_size=tk["vocab_size"],
        model=dict(m),
        train=train_cfg,
        variants=variants,
        benchmark_path=bench,
        eval_epochs=ev.get("epochs"),
        eval_lowercase=bool(ev.get("lowercase", True)),
        analysis=dict(an),
        tables=dict(raw["tables"]),
        output=output,
        parallel=raw["parallel"],
        raw=raw,
    )


def validate_config(path, profile: str | None = None, require_corpus: bool = True, output=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigValidationError([f"YAML syntax error: {exc}"]) from None
    return build_config(data, base_dir=path.parent, profile=profile, require_corpus=require_corpus, output=output)
