"""Representation dynamics across checkpoints.

Sentence embeddings from several epochs are projected jointly into one 2-D
space; within an epoch we measure dispersion as the entropy of a 2-D
histogram, between epochs the distance of the projected means.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint
from .errors import ConfigError, ContractViolation
from .evaluation import EvalReport, build_report, normalize_category, score_pairs
from .model import pad_batch, slopes_tensor
from .tokenizer import Tokenizer, encode

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingSnapshot:
    epoch: int
    labels: list[str]
    vectors: np.ndarray
    projection: np.ndarray | None = None
    space: str | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.labels) != len(self.vectors):
            raise ContractViolation("vectors must be N x d with one label per row")
        if not np.all(np.isfinite(self.vectors)):
            raise ContractViolation(f"non-finite embedding at epoch {self.epoch}")


@dataclass
class SpaceStats:
    entropy: float
    mean_distance_to: dict[int, float] = field(default_factory=dict)


def _pca(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = np.zeros((2, x.shape[1]))
    tol = (s[0] if s.size else 0.0) * max(x.shape) * np.finfo(float).eps
    for k in range(min(2, vt.shape[0])):
        if s[k] <= tol:
            continue
        v = vt[k]
        comps[k] = v if v[np.argmax(np.abs(v))] > 0 else -v
    if not comps.any():
        warnings.warn("zero-variance input: PCA projection is identically zero")
    return centered @ comps.T


def project_2d(vectors, method: str = "pca", seed: int = 0) -> np.ndarray:
    """N x 2 projection.

    pca: mean-centred top-2 principal components, each signed so that its
    largest-magnitude loading is positive; directions without variance give
    zeros. tsne: seeded t-SNE with perplexity min(30, (N-1)/3).
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ContractViolation(f"need at least 2 points of dimension >= 2, got shape {x.shape}")
    if method == "pca":
        return _pca(x)
    if method == "tsne":
        from sklearn.manifold import TSNE

        perplexity = min(30.0, (x.shape[0] - 1) / 3.0)
        return TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(x)
    raise ConfigError(f"unknown projection method {method!r}")


def histogram_entropy(points, bins_per_axis: int = 50, bounds=None) -> float:
    """Entropy (nats) of the normalized 2-D histogram over a bins x bins grid.

    The grid spans ``bounds = ((xmin, xmax), (ymin, ymax))`` or, by default,
    the points' bounding box; points on the upper edge fall in the last bin.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ContractViolation("histogram of zero points")
    if bounds is None:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo = np.array([bounds[0][0], bounds[1][0]], dtype=np.float64)
        hi = np.array([bounds[0][1], bounds[1][1]], dtype=np.float64)
    span = hi - lo
    idx = np.zeros_like(pts, dtype=np.int64)
    for axis in range(2):
        if span[axis] > 0:
            cell = np.floor((pts[:, axis] - lo[axis]) / span[axis] * bins_per_axis)
            idx[:, axis] = np.clip(cell, 0, bins_per_axis - 1).astype(np.int64)
    flat = idx[:, 0] * bins_per_axis + idx[:, 1]
    counts = np.bincount(flat, minlength=bins_per_axis * bins_per_axis).astype(np.float64)
    p = counts[counts > 0] / len(pts)
    return float(max(0.0, -(p * np.log(p)).sum()))


def epoch_mean_distance(a: EmbeddingSnapshot, b: EmbeddingSnapshot) -> float:
    if a.projection is None or b.projection is None:
        raise ContractViolation("snapshots must be projected before comparing them")
    if a.space != b.space:
        raise ContractViolation(f"snapshots live in different projection spaces ({a.space} vs {b.space})")
    return float(np.linalg.norm(a.projection.mean(axis=0) - b.projection.mean(axis=0)))


def project_jointly(snapshots: list[EmbeddingSnapshot], method: str = "pca", seed: int = 0) -> list[EmbeddingSnapshot]:
    """Fit one projection on all snapshots together and split it back per epoch."""
    stacked = np.concatenate([s.vectors for s in snapshots])
    proj = project_2d(stacked, method, seed)
    space = hashlib.sha256(stacked.tobytes() + method.encode() + str(seed).encode()).hexdigest()[:12]
    start = 0
    for s in snapshots:
        s.projection = proj[start : start + len(s.vectors)]
        s.space = space
        start += len(s.vectors)
    return snapshots


def embed_sentences(model, tok: Tokenizer, sentences, slopes=None, pool: str = "mean", batch_size: int = 256) -> np.ndarray:
    """Pooled final-layer states over non-special positions, one row per sentence."""
    seqs = [encode(tok, s, add_bos=True, add_eos=True) for s in sentences]
    too_long = [s for s in seqs if len(s) > model.config.max_seq_len]
    if too_long:
        raise ContractViolation(f"{len(too_long)} sentences exceed max_seq_len={model.config.max_seq_len}")
    s_t = slopes_tensor(model, slopes)
    rows = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(seqs), batch_size):
            chunk = seqs[i : i + batch_size]
            ids = pad_batch(chunk, tok.pad_id, model.config.max_seq_len)
            h = model.hidden_states(ids, s_t).double()
            keep = ids >= len(tok.special_ids)
            if not bool(keep.any(dim=1).all()):
                raise ContractViolation("a sentence consists only of special tokens")
            if pool == "mean":
                w = keep.double()
                rows.append((h * w[..., None]).sum(1) / w.sum(1, keepdim=True))
            elif pool == "last":
                last = (keep * torch.arange(ids.shape[1])).argmax(dim=1)
                rows.append(h[torch.arange(len(chunk)), last])
            else:
                raise ConfigError(f"unknown pooling {pool!r}")
    return torch.cat(rows).numpy()


def epoch_pairs(epochs) -> list[tuple[int, int]]:
    """Consecutive epoch pairs, plus first-to-last when there are more than two."""
    epochs = list(epochs)
    pairs = list(zip(epochs, epochs[1:]))
    if len(epochs) > 2:
        pairs.append((epochs[0], epochs[-1]))
    return pairs


@dataclass
class Trajectory:
    label: str
    snapshots: list[EmbeddingSnapshot]
    stats: dict[int, SpaceStats]
    accuracy: dict[int, EvalReport]

    @property
    def epochs(self) -> list[int]:
        return [s.epoch for s in self.snapshots]

    def table_row(self) -> dict[str, float]:
        row = {f"entropy_{e}": self.stats[e].entropy for e in self.epochs}
        for a, b in epoch_pairs(self.epochs):
            row[f"distance_{a}-{b}"] = self.stats[a].mean_distance_to[b]
        return row


def _as_checkpoint(c) -> Checkpoint:
    return c if isinstance(c, Checkpoint) else load_checkpoint(c)


def track_trajectory(checkpoints, tokenizer: Tokenizer, pairs, category_filter=None, *, method: str = "pca",
                     bins_per_axis: int = 50, seed: int = 0, pool: str = "mean", label: str = "") -> Trajectory:
    """Accuracy and embedding-space statistics for each checkpoint epoch."""
    ckpts = sorted((_as_checkpoint(c) for c in checkpoints), key=lambda c: c.epoch)
    if len(ckpts) < 2:
        raise ContractViolation("need at least two checkpoints")
    cats = None if category_filter is None else {normalize_category(c) for c in category_filter}
    selected = [p for p in pairs if cats is None or p.category in cats]
    if not selected:
        raise ConfigError(f"no benchmark pairs in categories {sorted(cats or [])}")
    sentences = [s for p in selected for s in (p.good, p.bad)]
    labels = [lab for _ in selected for lab in ("good", "bad")]
    snapshots, accuracy = [], {}
    for ck in ckpts:
        if ck.config.vocab_size < len(tokenizer):
            raise ConfigError(f"checkpoint vocab {ck.config.vocab_size} < tokenizer size {len(tokenizer)}")
        model = ck.build()
        slopes = ck.inference_slopes
        vecs = embed_sentences(model, tokenizer, sentences, slopes, pool)
        snapshots.append(EmbeddingSnapshot(ck.epoch, labels, vecs))
        accuracy[ck.epoch] = build_report(score_pairs(model, tokenizer, selected, slopes), label, epoch=ck.epoch)
    project_jointly(snapshots, method, seed)
    allp = np.concatenate([s.projection for s in snapshots])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    bounds = ((lo[0], hi[0]), (lo[1], hi[1]))
    stats = {s.epoch: SpaceStats(histogram_entropy(s.projection, bins_per_axis, bounds)) for s in snapshots}
    for a in snapshots:
        for b in snapshots:
            stats[a.epoch].mean_distance_to[b.epoch] = epoch_mean_distance(a, b)
    return Trajectory(label, snapshots, stats, accuracy)


def write_space_stats_csv(trajectories, path) -> None:
    rows = [(t.label, t.table_row()) for t in trajectories]
    cols = []
    for _, row in rows:
        cols.extend(c for c in row if c not in cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + cols)
        for label, row in rows:
            writer.writerow([label] + [f"{row[c]:.6f}" if c in row else "" for c in cols])


def write_projection_csv(trajectory: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "label", "epoch"])
        for s in trajectory.snapshots:
            for (x, y), lab in zip(s.projection, s.labels):
                writer.writerow([f"{x:.8g}", f"{y:.8g}", lab, s.epoch])


def max_entropy(bins_per_axis: int = 50) -> float:
    return math.log(bins_per_axis * bins_per_axis)
