"""A small GPT-2 style decoder whose attention can carry a distance penalty.

Each head scores ``q k^T / sqrt(d_head) + slope_h * B`` where ``B[i, j] =
-(i - j)`` below the diagonal; future positions are masked out. Passing
``slopes=None`` removes the penalty altogether (the vanilla path, which is
paired with learned absolute positions).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractViolation, NumericalError, SequenceLengthError, VocabularyError

LEARNED = "learned"
NO_POSITIONS = "none"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 256
    d_ff: int | None = None
    vocab_size: int = 8192
    max_seq_len: int = 32
    dropout: float = 0.1
    positional: str = LEARNED
    tied_embeddings: bool = True

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        if self.n_heads >= 1 and self.d_model % self.n_heads:
            out.append(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_seq_len < 2:
            out.append(f"max_seq_len must be >= 2, got {self.max_seq_len}")
        if not 0.0 <= self.dropout < 1.0:
            out.append(f"dropout must lie in [0,1), got {self.dropout}")
        if self.positional not in (LEARNED, NO_POSITIONS):
            out.append(f"positional must be 'learned' or 'none', got {self.positional!r}")
        return out

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.d_head = cfg.d_head
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.attn_drop = nn.Dropout(cfg.dropout)
        self.resid_drop = nn.Dropout(cfg.dropout)
        pos = torch.arange(cfg.max_seq_len)
        rel = pos[None, :] - pos[:, None]
        # -inf must not be multiplied by a zero slope, so the mask is kept apart
        self.register_buffer("distance", torch.tril(rel).float(), persistent=False)
        self.register_buffer("causal", rel <= 0, persistent=False)

    def forward(self, x, slopes=None, return_weights=False):
        B, L, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if slopes is not None:
            penalty = self.distance[:L, :L].to(scores.dtype)
            scores = scores + slopes.to(scores.dtype).view(1, -1, 1, 1) * penalty
        scores = scores.masked_fill(~self.causal[:L, :L], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        y = self.attn_drop(weights) @ v
        y = y.transpose(1, 2).reshape(B, L, D)
        y = self.resid_drop(self.proj(y))
        if return_weights:
            return y, weights
        return y


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x, slopes=None):
        x = x + self.attn(self.ln1(x), slopes)
        return x + self.mlp(self.ln2(x))


class TransformerLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model) if cfg.positional == LEARNED else None
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = None if cfg.tied_embeddings else nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.apply(_init_weights)

    def hidden_states(self, ids, slopes=None):
        """Final-layer states (after the closing layer norm), shape (B, L, d_model)."""
        L = ids.shape[1]
        x = self.tok_emb(ids)
        if self.pos_emb is not None:
            x = x + self.pos_emb(torch.arange(L, device=ids.device))
        x = self.drop(x)
        for block in self.blocks:
            x = block(x, slopes)
        return self.ln_f(x)

    def forward(self, ids, slopes=None):
        h = self.hidden_states(ids, slopes)
        if self.lm_head is None:
            return h @ self.tok_emb.weight.T
        return self.lm_head(h)


def _init_weights(module):
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if getattr(module, "bias", None) is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig, seed: int | None = None, dtype=torch.float32) -> TransformerLM:
    if seed is not None:
        torch.manual_seed(seed)
    return TransformerLM(cfg).to(dtype)


def slopes_tensor(model: TransformerLM, slopes):
    """Normalize per-head slopes: None/empty means no bias term."""
    if slopes is None:
        return None
    t = torch.as_tensor(slopes, dtype=torch.float64 if _dtype(model) == torch.float64 else torch.float32)
    if t.numel() == 0:
        return None
    if t.numel() != model.config.n_heads:
        raise ContractViolation(f"expected {model.config.n_heads} slopes, got {t.numel()}")
    return t


def _dtype(model):
    return next(model.parameters()).dtype


def check_ids(model: TransformerLM, ids) -> torch.Tensor:
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.ndim == 1:
        ids = ids[None, :]
    cfg = model.config
    if ids.shape[-1] > cfg.max_seq_len:
        raise SequenceLengthError(f"sequence of length {ids.shape[-1]} exceeds max_seq_len={cfg.max_seq_len}")
    if ids.shape[-1] == 0:
        raise ContractViolation("empty sequence")
    if ids.numel() and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise VocabularyError(f"token id outside [0, {cfg.vocab_size})")
    return ids


def forward(model: TransformerLM, ids, slopes=None) -> torch.Tensor:
    """Logits (L x vocab) for one sequence; row t predicts token t+1."""
    ids = check_ids(model, ids)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(ids, slopes_tensor(model, slopes))[0]
    finally:
        model.train(was_training)


def sequence_log_prob(model: TransformerLM, ids, slopes=None) -> float:
    """Sum over t >= 1 of ln P(ids[t] | ids[:t]); ``ids[0]`` is the BOS context."""
    ids = check_ids(model, ids)
    if ids.shape[-1] < 2:
        raise ContractViolation("need BOS plus at least one token")
    logits = forward(model, ids, slopes)
    logp = torch.log_softmax(logits[:-1].double(), dim=-1)
    return float(logp.gather(1, ids[0, 1:, None]).sum())


def pad_batch(seqs, pad_id: int, max_len: int) -> torch.Tensor:
    """Right-pad (and right-truncate) sequences into a (B, L) tensor."""
    seqs = [list(s)[:max_len] for s in seqs]
    L = max(len(s) for s in seqs)
    out = torch.full((len(seqs), L), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
    return out


def token_losses(model: TransformerLM, batch: torch.Tensor, slopes, pad_id: int):
    """Summed next-token cross-entropy and the number of scored targets."""
    logits = model(batch, slopes)
    targets = batch[:, 1:]
    mask = targets != pad_id
    ce = F.cross_entropy(logits[:, :-1].reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    ce = ce.view_as(targets) * mask
    return ce.sum(), int(mask.sum())


def loss_and_gradients(model: TransformerLM, batch, slopes=None, pad_id: int = 3, batch_id=None):
    """Mean next-token cross-entropy over non-pad targets plus d(loss)/d(param)."""
    seqs = list(batch)
    if not seqs:
        raise ContractViolation("empty batch")
    for s in seqs:
        check_ids(model, s)
    ids = pad_batch(seqs, pad_id, model.config.max_seq_len)
    model.zero_grad(set_to_none=True)
    total, n = token_losses(model, ids, slopes_tensor(model, slopes), pad_id)
    if n == 0:
        raise ContractViolation("batch has no scorable target positions")
    loss = total / n
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {float(loss)} in batch {batch_id}")
    loss.backward()
    grads = {name: p.grad.detach().clone() for name, p in model.named_parameters() if p.grad is not None}
    for name, p in model.named_parameters():
        grads.setdefault(name, torch.zeros_like(p))
    return float(loss.detach()), grads


def sentence_embeddings(model: TransformerLM, ids, slopes=None, n_special: int = 4, pool: str = "mean"):
    """Pooled final-layer state over non-special positions (ids below ``n_special``)."""
    ids = check_ids(model, ids)
    keep = ids[0] >= n_special
    if not bool(keep.any()):
        raise ContractViolation("sentence consists only of special tokens")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            h = model.hidden_states(ids, slopes_tensor(model, slopes))[0]
    finally:
        model.train(was_training)
    if pool == "mean":
        return h[keep].mean(dim=0)
    if pool == "last":
        return h[keep][-1]
    raise ConfigError(f"unknown pooling {pool!r}")
