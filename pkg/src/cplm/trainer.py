"""Epoch-based training with the slope schedule applied at epoch boundaries."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from . import attention_bias as ab
from .checkpoint import save_checkpoint
from .corpus import Corpus
from .errors import ConfigError, ContractViolation, EmptyCorpusError, NumericalError
from .model import ModelConfig, build_model, pad_batch, slopes_tensor, token_losses
from .tokenizer import Tokenizer, encode, train_tokenizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-6
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 512
    grad_accum_steps: int = 2
    total_epochs: int = 20
    warmup_fraction: float = 0.1
    lr_schedule: str = "cosine_with_restarts"
    n_cycles: int = 1
    max_grad_norm: float | None = 1.0
    early_stop_tolerance_epochs: int = 1
    eval_split_fraction: float = 0.05
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.lr > 0:
            out.append(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_fraction < 1:
            out.append(f"warmup_fraction must lie in [0,1), got {self.warmup_fraction}")
        if self.total_epochs < 1:
            out.append(f"total_epochs must be >= 1, got {self.total_epochs}")
        if not 0 < self.eval_split_fraction < 0.5:
            out.append(f"eval_split_fraction must lie in (0,0.5), got {self.eval_split_fraction}")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            out.append("batch_size and grad_accum_steps must be >= 1")
        if self.lr_schedule != "cosine_with_restarts":
            out.append(f"unsupported lr_schedule {self.lr_schedule!r}")
        if self.n_cycles < 1:
            out.append(f"n_cycles must be >= 1, got {self.n_cycles}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            out.append(f"betas must be two values in [0,1), got {self.betas}")
        if not self.seeds:
            out.append("at least one seed is required")
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ppl: float
    m: float | None
    w: float
    lr: float
    ckpt: str


@dataclass
class TrainRunRecord:
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    label: str = ""

    @property
    def slopes(self) -> list[float | None]:
        return [e.m for e in self.epochs]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.epochs:
                fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def read_jsonl(cls, path, seed: int = 0, label: str = "") -> "TrainRunRecord":
        lines = Path(path).read_text().splitlines()
        return cls(seed, [EpochRecord(**json.loads(line)) for line in lines if line.strip()], label=label)


def warmup_steps(cfg: TrainConfig, total_steps: int) -> int:
    return math.ceil(cfg.warmup_fraction * total_steps)


def lr_at_step(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear warmup to ``cfg.lr`` then cosine decay, restarting ``n_cycles`` times."""
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    warm = warmup_steps(cfg, total_steps)
    if step < warm:
        return cfg.lr * step / warm
    span = total_steps - warm
    if span <= 0:
        return cfg.lr
    progress = (step - warm) / span
    if progress >= 1.0:
        return 0.0
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * ((cfg.n_cycles * progress) % 1.0)))


def split_validation(corpus: Corpus, fraction: float) -> tuple[Corpus, Corpus]:
    """Deterministic hold-out by hash of the sentence text."""
    train, held = [], []
    for s in corpus.sentences:
        h = int.from_bytes(hashlib.sha256(s.encode("utf-8")).digest()[:8], "big") / 2**64
        (held if h < fraction else train).append(s)
    if not held or not train:
        raise EmptyCorpusError(
            f"validation split of {len(corpus)} sentences at fraction {fraction} left an empty side"
        )
    return (Corpus(tuple(train), corpus.source_name, corpus.preprocessing_log),
            Corpus(tuple(held), corpus.source_name + ":val", corpus.preprocessing_log))


def encode_corpus(tok: Tokenizer, corpus, max_len: int) -> list[list[int]]:
    return [encode(tok, s, add_bos=True, add_eos=True)[:max_len] for s in corpus]


def perplexity(model, held_out, slopes=None, tokenizer: Tokenizer | None = None,
               pad_id: int = 3, batch_size: int = 128) -> float:
    """exp of mean next-token cross-entropy over every non-pad target.

    ``held_out`` is either a list of id sequences or a Corpus plus ``tokenizer``.
    """
    if isinstance(held_out, Corpus):
        if tokenizer is None:
            raise ContractViolation("a tokenizer is needed to score a Corpus")
        held_out = encode_corpus(tokenizer, held_out, model.config.max_seq_len)
    seqs = [s for s in held_out if len(s) >= 2]
    if not seqs:
        raise ContractViolation("empty held-out set")
    s_t = slopes_tensor(model, slopes)
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        with torch.no_grad():
            for i in range(0, len(seqs), batch_size):
                ids = pad_batch(seqs[i : i + batch_size], pad_id, model.config.max_seq_len)
                loss_sum, n = token_losses(model, ids, s_t, pad_id)
                total += float(loss_sum)
                count += n
    finally:
        model.train(was_training)
    return math.exp(total / count)


def should_stop(val_history: list[float], tolerance: int) -> bool:
    """True once the last ``tolerance`` epochs all failed to beat the best before them."""
    if tolerance <= 0 or len(val_history) <= tolerance:
        return False
    best_before = min(val_history[:-tolerance])
    return all(v >= best_before for v in val_history[-tolerance:])


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)


def accumulate_gradients(model, micro_batches, slopes, pad_id: int) -> tuple[float, int]:
    """Backprop the token-weighted mean loss over several micro-batches.

    Each micro-batch contributes ``sum_loss / total_tokens`` so the summed
    gradient equals that of one batch holding every sequence.
    """
    n_total = sum(int((mb[:, 1:] != pad_id).sum()) for mb in micro_batches)
    if n_total == 0:
        return 0.0, 0
    loss_sum = 0.0
    for mb in micro_batches:
        total, _ = token_losses(model, mb, slopes, pad_id)
        (total / n_total).backward()
        loss_sum += float(total.detach())
    return loss_sum, n_total


def train(model_config: ModelConfig, schedule: ab.ScheduleSpec, corpus: Corpus, train_config: TrainConfig,
          *, out_dir, seed: int = 0, tokenizer: Tokenizer | None = None, label: str = "") -> TrainRunRecord:
    """Train one model and write a checkpoint plus a JSON-lines record entry per epoch."""
    if schedule.has_bias and model_config.positional != "none":
        raise ConfigError("bias schedules require positional='none'")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tok = tokenizer or train_tokenizer(corpus, model_config.vocab_size)
    if len(tok) > model_config.vocab_size:
        raise ConfigError(f"tokenizer has {len(tok)} ids but model vocab_size is {model_config.vocab_size}")
    train_part, val_part = split_validation(corpus, train_config.eval_split_fraction)
    max_len = model_config.max_seq_len
    train_ids = encode_corpus(tok, train_part, max_len)
    val_ids = encode_corpus(tok, val_part, max_len)

    torch.manual_seed(seed)
    model = build_model(model_config, seed=seed)
    opt = make_optimizer(model, train_config)
    gen = torch.Generator().manual_seed(seed)
    bs, accum = train_config.batch_size, train_config.grad_accum_steps
    n_batches = math.ceil(len(train_ids) / bs)
    steps_per_epoch = math.ceil(n_batches / accum)
    total_steps = steps_per_epoch * train_config.total_epochs
    pad = tok.pad_id

    record = TrainRunRecord(seed=seed, label=label)
    record_path = out_dir / "train_record.jsonl"
    record_path.write_text("")
    val_history = []
    step = 0
    for t in range(train_config.total_epochs):
        slopes = ab.effective_slopes(schedule, t, model_config.n_heads)
        s_t = slopes_tensor(model, slopes)
        model.train()
        perm = torch.randperm(len(train_ids), generator=gen).tolist()
        batches = [pad_batch([train_ids[i] for i in perm[j : j + bs]], pad, max_len) for j in range(0, len(perm), bs)]
        epoch_loss, epoch_tokens = 0.0, 0
        for g in range(0, len(batches), accum):
            lr = lr_at_step(train_config, step, total_steps)
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad(set_to_none=True)
            loss_sum, n_tok = accumulate_gradients(model, batches[g : g + accum], s_t, pad)
            if not math.isfinite(loss_sum):
                raise NumericalError(f"non-finite loss at epoch {t + 1}, step {step}")
            if train_config.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_config.max_grad_norm)
            opt.step()
            step += 1
            epoch_loss += loss_sum
            epoch_tokens += n_tok
        val_ppl = perplexity(model, val_ids, slopes, pad_id=pad)
        m_t = None if slopes is None else ab.schedule_slope(schedule, t)
        w_t = 1.0 if m_t is None else ab.working_memory(m_t)
        ckpt = save_checkpoint(
            ckpt_dir / f"epoch_{t + 1:02d}.cplm", model, t + 1,
            slope=None if m_t is None else ab.schedule_slope(schedule, t + 1),
            train_slope=m_t,
            schedule=asdict(schedule),
            rng_state=torch.get_rng_state().numpy().tobytes(),
            extra={"inference_slopes": slopes, "seed": seed, "label": label},
        )
        entry = EpochRecord(
            epoch=t + 1,
            train_loss=epoch_loss / max(epoch_tokens, 1),
            val_ppl=val_ppl,
            m=m_t,
            w=w_t,
            lr=lr_at_step(train_config, step, total_steps),
            ckpt=str(ckpt.relative_to(out_dir)),
        )
        record.epochs.append(entry)
        with open(record_path, "a") as fh:
            fh.write(json.dumps(asdict(entry)) + "\n")
        logger.info("%s seed=%d epoch=%d loss=%.4f val_ppl=%.3f m=%s", label, seed, t + 1,
                    entry.train_loss, val_ppl, m_t)
        val_history.append(val_ppl)
        if should_stop(val_history, train_config.early_stop_tolerance_epochs):
            record.stopped_early = True
            break
    return record
