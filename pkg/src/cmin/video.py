"""Video side: multi-head self-attention over frames followed by a BiGRU.

Frames are rows throughout (shape (..., n, d)). The column-major form used
in the attention formula is available through :func:`scaled_dot_attention`,
which transposes at the boundary.
"""

from __future__ import annotations

import math

import numpy as np

from .layers import add_bigru, bigru
from .params import ParamBuilder, ParamTree
from .tensor import (Tensor, ShapeError, add, as_tensor, linear, matmul, reshape, scale,
                     softmax, swap_last, transpose)

MASKED = -1e9


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask=None, weights_out: list | None = None) -> Tensor:
    """Row-major scaled dot-product attention: softmax(q k^T / sqrt(d_k)) v.

    ``key_mask`` (broadcastable to the score shape) marks valid keys with 1.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or k.shape[-2] < 1:
        raise ShapeError(f"attention: incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if key_mask is not None:
        offset = np.where(np.broadcast_to(key_mask, scores.shape) > 0, 0.0, MASKED)
        scores = add(scores, offset.astype(scores.data.dtype))
    w = softmax(scores)
    if weights_out is not None:
        weights_out.append(w)
    return matmul(w, v)


def scaled_dot_attention(Q, K, V) -> Tensor:
    """Attention for column-major inputs Q (d_k, n_q), K (d_k, n_k), V (d_v, n_k).

    Returns (n_q, d_v).
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError(f"scaled_dot_attention expects rank-2 inputs, got {Q.shape}, {K.shape}, {V.shape}")
    return attention(swap_last(Q), swap_last(K), swap_last(V))


def add_attention_params(pb: ParamBuilder, prefix: str, d_model: int, heads: int) -> None:
    if d_model % heads:
        raise ValueError(f"head count {heads} does not divide d_model {d_model}")
    # per-head W_i^Q etc. are the row blocks of these stacked matrices
    for name in ("w_q", "w_k", "w_v", "w_o"):
        pb.matrix(f"{prefix}.{name}", d_model, d_model)


def multi_head(Q, K, V, p: ParamTree, heads: int, key_mask=None, weights_out: list | None = None) -> Tensor:
    """Multi-head attention on row-major inputs (..., n, d_model).

    Head i uses rows ``i*d_k:(i+1)*d_k`` of the stacked projections; the
    concatenated heads go through ``w_o``.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    d_model = p["w_q"].shape[0]
    if d_model % heads:
        raise ValueError(f"head count {heads} does not divide d_model {d_model}")
    dk = d_model // heads

    def split(x, w):
        y = linear(x, w)
        lead = y.shape[:-2]
        y = reshape(y, lead + (y.shape[-2], heads, dk))
        nd = y.ndim
        return transpose(y, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    q, k, v = split(Q, p["w_q"]), split(K, p["w_k"]), split(V, p["w_v"])
    if key_mask is not None:
        km = np.asarray(key_mask)
        key_mask = km.reshape(km.shape[:-1] + (1, 1, km.shape[-1]))
    out = attention(q, k, v, key_mask=key_mask, weights_out=weights_out)
    nd = out.ndim
    out = transpose(out, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    out = reshape(out, out.shape[:-2] + (d_model,))
    return linear(out, p["w_o"])


def add_video_params(pb: ParamBuilder, prefix: str, feat_dim: int, d_model: int, heads: int, width: int) -> None:
    pb.matrix(f"{prefix}.proj.w", d_model, feat_dim)
    pb.bias(f"{prefix}.proj.b", d_model)
    add_attention_params(pb, f"{prefix}.attn", d_model, heads)
    add_bigru(pb, f"{prefix}.gru", d_model, width)


def self_attend(V: Tensor, p: ParamTree, heads: int, mask=None, weights_out: list | None = None) -> Tensor:
    """Residual multi-head self-attention block: MultiHead(V, V, V) + V."""
    return multi_head(V, V, V, p, heads, key_mask=mask, weights_out=weights_out) + V


def encode_video(frames, p: ParamTree, heads: int, mask=None, use_self_attention: bool = True) -> Tensor:
    """Frame features (..., n, feat_dim) to contextual states (..., n, width)."""
    frames = as_tensor(frames)
    if frames.shape[-2] == 0:
        raise ValueError("video has no frames")
    v = linear(frames, p["proj.w"], p["proj.b"])
    if use_self_attention:
        v = self_attend(v, p.sub("attn"), heads, mask=mask)
    return bigru(v, p.sub("gru"), mask=mask)
