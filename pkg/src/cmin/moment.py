"""Multi-scale anchor moments, their losses, and NMS-based inference.

All boundaries are in feature time-step units unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .layers import add_bigru
from .params import ParamBuilder, ParamTree
from .tensor import Tensor, as_tensor, clamp, linear, log, mul, reshape, sigmoid, smooth_l1, tsum

EPS = 1e-7


class Interval(NamedTuple):
    start: float
    end: float

    def check(self) -> "Interval":
        if not (np.isfinite(self.start) and np.isfinite(self.end)) or self.start >= self.end:
            raise ValueError(f"invalid interval ({self.start}, {self.end})")
        return self

    @property
    def length(self) -> float:
        return self.end - self.start


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def iou_arrays(s1, e1, s2, e2) -> np.ndarray:
    """Elementwise temporal IoU of interval arrays (broadcasting)."""
    inter = np.clip(np.minimum(e1, e2) - np.maximum(s1, s2), 0.0, None)
    union = np.maximum(e1, e2) - np.minimum(s1, s2)
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass
class CandidateSet:
    """Anchors (i - w_j/2, i + w_j/2) for every step i and width index j.

    ``valid`` marks anchors lying inside [0, n]; the rest are discarded.
    """

    n: int
    widths: tuple[float, ...]
    starts: np.ndarray
    ends: np.ndarray
    valid: np.ndarray

    @property
    def k(self) -> int:
        return len(self.widths)

    @property
    def count(self) -> int:
        return int(self.valid.sum())

    def items(self) -> list[tuple[int, int, Interval]]:
        return [(int(i), int(j), Interval(float(self.starts[i, j]), float(self.ends[i, j])))
                for i, j in zip(*np.nonzero(self.valid))]

    def at(self, i: int) -> list[Interval]:
        return [Interval(float(self.starts[i, j]), float(self.ends[i, j]))
                for j in range(self.k) if self.valid[i, j]]


def enumerate_candidates(n: int, widths: Sequence[float]) -> CandidateSet:
    if n < 1:
        raise ValueError("sequence length must be positive")
    w = np.asarray(widths, dtype=np.float64)
    if w.size == 0 or np.any(w <= 0):
        raise ValueError(f"widths must be positive and nonempty, got {list(widths)}")
    centers = np.arange(n, dtype=np.float64)[:, None]
    starts = centers - w / 2.0
    ends = centers + w / 2.0
    valid = (starts >= 0) & (ends <= n)
    return CandidateSet(n, tuple(float(x) for x in w), starts, ends, valid)


def add_head_params(pb: ParamBuilder, prefix: str, width: int, fused: int, k: int) -> None:
    add_bigru(pb, f"{prefix}.gru", fused, width)
    pb.matrix(f"{prefix}.score.w", k, width)
    pb.bias(f"{prefix}.score.b", k)
    pb.matrix(f"{prefix}.offset.w", 2 * k, width)
    pb.bias(f"{prefix}.offset.b", 2 * k)


def score_offsets(hf, p: ParamTree) -> tuple[Tensor, Tensor]:
    """Confidence (..., n, k) in (0, 1) and offsets (..., n, k, 2)."""
    hf = as_tensor(hf)
    cs = sigmoid(linear(hf, p["score.w"], p["score.b"]))
    off = linear(hf, p["offset.w"], p["offset.b"])
    return cs, reshape(off, off.shape[:-1] + (off.shape[-1] // 2, 2))


def soft_labels(target: Sequence[float], cands: CandidateSet, clear: float) -> tuple[np.ndarray, np.ndarray]:
    """(cleared IoU labels, raw IoU) per anchor; invalid anchors get 0."""
    raw = iou_arrays(cands.starts, cands.ends, target[0], target[1]) * cands.valid
    return np.where(raw < clear, 0.0, raw), raw


def masked_alignment(cs, labels: np.ndarray, valid: np.ndarray) -> Tensor:
    """Mean over valid anchors of the soft-label cross-entropy, then mean over leading items.

    ``cs``, ``labels`` and ``valid`` share shape (..., n, k).
    """
    cs = as_tensor(cs)
    p = clamp(cs, EPS, 1.0 - EPS)
    terms = mul(log(p), labels) + mul(log(1.0 - p), 1.0 - labels)
    counts = valid.reshape(valid.shape[:-2] + (-1,)).sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("no valid candidate moments to align")
    weights = valid / counts.reshape(counts.shape + (1, 1))
    items = max(1, int(np.prod(valid.shape[:-2])))
    return mul(tsum(mul(terms, weights)), -1.0 / items)


def alignment_loss(cs, target: Sequence[float], cands: CandidateSet, clear: float = 0.3) -> Tensor:
    if not 0.0 <= clear < 1.0:
        raise ValueError(f"clearing threshold must lie in [0, 1), got {clear}")
    labels, _ = soft_labels(target, cands, clear)
    return masked_alignment(cs, labels, cands.valid.astype(np.float64))


def regression_targets(target: Sequence[float], cands: CandidateSet, high: float) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (n, k, 2) from each anchor to the target, and the high-IoU mask (n, k)."""
    raw = iou_arrays(cands.starts, cands.ends, target[0], target[1])
    member = ((raw > high) & cands.valid).astype(np.float64)
    deltas = np.stack([target[0] - cands.starts, target[1] - cands.ends], axis=-1)
    return deltas * member[..., None], member


def masked_regression(offsets, deltas: np.ndarray, member: np.ndarray) -> Tensor:
    """Per-item mean smooth-L1 over member anchors (0 for items with none), averaged over items."""
    offsets = as_tensor(offsets)
    counts = member.reshape(member.shape[:-2] + (-1,)).sum(axis=-1)
    scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    weights = member * scale.reshape(scale.shape + (1, 1))
    items = max(1, int(np.prod(member.shape[:-2])))
    w = np.repeat(weights[..., None], 2, axis=-1)
    err = smooth_l1(as_tensor(deltas) - offsets)
    return mul(tsum(mul(err, w)), 1.0 / items)


def regression_loss(offsets, target: Sequence[float], cands: CandidateSet, high: float = 0.7) -> Tensor:
    if not 0.0 < high <= 1.0:
        raise ValueError(f"high-score threshold must lie in (0, 1], got {high}")
    deltas, member = regression_targets(target, cands, high)
    return masked_regression(offsets, deltas, member)


def total_loss(align, reg, alpha: float = 0.001) -> Tensor:
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return as_tensor(align) + mul(reg, float(alpha))


class Prediction(NamedTuple):
    start: float
    end: float
    score: float


def nms(intervals: np.ndarray, threshold: float, limit: int | None = None) -> list[int]:
    """Greedy suppression over intervals already sorted best-first.

    Keeps an interval unless its IoU with an already kept one exceeds
    ``threshold``; stops once ``limit`` intervals are kept.
    """
    keep: list[int] = []
    for idx in range(len(intervals)):
        if limit is not None and len(keep) >= limit:
            break
        s, e = intervals[idx]
        if keep:
            kept = intervals[keep]
            if np.any(iou_arrays(kept[:, 0], kept[:, 1], s, e) > threshold):
                continue
        keep.append(idx)
    return keep


def predict(cs, offsets, cands: CandidateSet, nms_threshold: float = 0.5, top_k: int = 1) -> list[Prediction]:
    """Refine, clamp, rank and suppress anchors; return up to ``top_k`` moments.

    Ties in score go to the earlier start, then to the smaller width index.
    """
    if not 0.0 < nms_threshold <= 1.0:
        raise ValueError(f"nms threshold must lie in (0, 1], got {nms_threshold}")
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    cs = np.asarray(cs)
    offsets = np.asarray(offsets)
    ii, jj = np.nonzero(cands.valid)
    starts = np.clip(cands.starts[ii, jj] + offsets[ii, jj, 0], 0.0, cands.n)
    ends = np.clip(cands.ends[ii, jj] + offsets[ii, jj, 1], 0.0, cands.n)
    scores = cs[ii, jj]
    ok = starts < ends
    starts, ends, scores, jj = starts[ok], ends[ok], scores[ok], jj[ok]
    order = np.lexsort((jj, starts, -scores))
    boxes = np.stack([starts[order], ends[order]], axis=-1)
    ranked = scores[order]
    return [Prediction(float(boxes[i, 0]), float(boxes[i, 1]), float(ranked[i]))
            for i in nms(boxes, nms_threshold, limit=top_k)]
