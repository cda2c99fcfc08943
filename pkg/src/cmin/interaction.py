"""Frame-by-frame fusion of the video and query streams.

Pipeline per frame: additive attention over words, row softmax, weighted sum
of word states, cross gating, and low-rank bilinear fusion.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .params import ParamBuilder, ParamTree
from .tensor import (Tensor, add, as_tensor, broadcast_to, concat, linear, matmul, mul,
                     reshape, sigmoid, softmax, tanh)

MASKED = -1e9


def add_interaction_params(pb: ParamBuilder, prefix: str, width: int, attn_width: int | None = None,
                           fused: int | None = None, gate: bool = True, bilinear: bool = True) -> None:
    a = attn_width or width
    f = fused or width
    pb.matrix(f"{prefix}.score.w1", a, width)
    pb.matrix(f"{prefix}.score.w2", a, width)
    pb.bias(f"{prefix}.score.b", a)
    pb.matrix(f"{prefix}.score.w", 1, a)
    if gate:
        for side in ("v", "s"):
            pb.matrix(f"{prefix}.gate.w_{side}", width, width)
            pb.bias(f"{prefix}.gate.b_{side}", width)
    if bilinear:
        # kept apart from the gate matrices on purpose
        for side in ("v", "s"):
            pb.matrix(f"{prefix}.fuse.w_{side}", f, width)
        pb.matrix(f"{prefix}.fuse.p", f, f)
        pb.bias(f"{prefix}.fuse.b", f)
    else:
        pb.matrix(f"{prefix}.concat.w", f, 2 * width)
        pb.bias(f"{prefix}.concat.b", f)


def attention_matrix(hv, ol, p: ParamTree) -> Tensor:
    """Scores M[..., i, j] = w . tanh(W1 hv_i + W2 ol_j + b), shape (..., n, m)."""
    hv, ol = as_tensor(hv), as_tensor(ol)
    a = linear(hv, p["w1"])                      # (..., n, a)
    c = linear(ol, p["w2"], p["b"])              # (..., m, a)
    lead = a.shape[:-2]
    n, m, width = a.shape[-2], c.shape[-2], a.shape[-1]
    full = lead + (n, m, width)
    a4 = broadcast_to(reshape(a, lead + (n, 1, width)), full)
    c4 = broadcast_to(reshape(c, lead + (1, m, width)), full)
    s = linear(tanh(add(a4, c4)), p["w"])        # (..., n, m, 1)
    return reshape(s, lead + (n, m))


def row_weights(M, word_mask=None) -> Tensor:
    """Row softmax over words; masked words get zero weight."""
    M = as_tensor(M)
    if word_mask is not None:
        wm = np.asarray(word_mask)
        wm = wm.reshape(wm.shape[:-1] + (1, wm.shape[-1]))
        offset = np.where(np.broadcast_to(wm, M.shape) > 0, 0.0, MASKED).astype(M.data.dtype)
        M = add(M, offset)
    return softmax(M)


def aggregate(M, ol, word_mask=None) -> tuple[Tensor, Tensor]:
    """Per-frame convex combination of word states.

    Returns ``(hs, weights)`` where ``weights`` is the row-softmaxed matrix
    actually used for the weighted sum.
    """
    weights = row_weights(M, word_mask)
    return matmul(weights, ol), weights


def cross_gate(hv, hs, p: ParamTree) -> tuple[Tensor, Tensor]:
    """Each stream is gated by a sigmoid of the other one.

    Returns ``(gated_video, gated_query)``.
    """
    hv, hs = as_tensor(hv), as_tensor(hs)
    g_v = sigmoid(linear(hv, p["w_v"], p["b_v"]))
    g_s = sigmoid(linear(hs, p["w_s"], p["b_s"]))
    return mul(hv, g_s), mul(hs, g_v)


def bilinear_fuse(hv, hs, p: ParamTree) -> Tensor:
    """Low-rank bilinear fusion P (sig(Wv hv) * sig(Ws hs)) + b."""
    joint = mul(sigmoid(linear(hv, p["w_v"])), sigmoid(linear(hs, p["w_s"])))
    return linear(joint, p["p"], p["b"])


def concat_fuse(hv, hs, p: ParamTree) -> Tensor:
    """Fusion replacement for the no-bilinear ablation: linear map of [hv; hs]."""
    return linear(concat([hv, hs], axis=-1), p["w"], p["b"])


def interact(hv, ol, p: ParamTree, word_mask=None, use_gate: bool = True, use_bilinear: bool = True,
             trace: dict | None = None) -> Tensor:
    """Full chain from video states and word states to fused frame features."""
    M = attention_matrix(hv, ol, p.sub("score"))
    hs, weights = aggregate(M, ol, word_mask)
    if trace is not None:
        trace["attention"] = weights
    if use_gate:
        hv_g, hs_g = cross_gate(hv, hs, p.sub("gate"))
    else:
        hv_g, hs_g = as_tensor(hv), hs
    if use_bilinear:
        return bilinear_fuse(hv_g, hs_g, p.sub("fuse"))
    return concat_fuse(hv_g, hs_g, p.sub("concat"))


def write_attention(path, weights: np.ndarray) -> None:
    """Write an (n, m) weight matrix as text.

    Layout: a header line ``n m`` followed by n lines of m values in
    ``%.17g`` so float64 values read back exactly.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise ValueError(f"attention export expects a matrix, got shape {weights.shape}")
    n, m = weights.shape
    lines = [f"{n} {m}"] + [" ".join(f"{x:.17g}" for x in row) for row in weights]
    Path(path).write_text("\n".join(lines) + "\n")


def read_attention(path) -> np.ndarray:
    lines = Path(path).read_text().split("\n")
    try:
        n, m = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from exc
    rows = [l for l in lines[1:] if l.strip()]
    if len(rows) != n:
        raise ValueError(f"{path}: header says {n} rows, found {len(rows)}")
    out = np.array([[float(x) for x in r.split()] for r in rows], dtype=np.float64)
    if out.shape != (n, m):
        raise ValueError(f"{path}: header says {n}x{m}, found {out.shape}")
    return out
