"""Shared building blocks: bidirectional GRU and small helpers."""

from __future__ import annotations

import numpy as np

from .params import ParamBuilder, ParamTree
from .tensor import Tensor, concat, gru_scan, linear, reshape


def add_bigru(pb: ParamBuilder, prefix: str, d_in: int, width: int) -> None:
    """Allocate a BiGRU whose concatenated output is ``width`` wide."""
    if width % 2:
        raise ValueError(f"BiGRU width must be even, got {width}")
    h = width // 2
    for side in ("fwd", "bwd"):
        pb.matrix(f"{prefix}.{side}.w_x", 3 * h, d_in)
        pb.bias(f"{prefix}.{side}.b_x", 3 * h)
        pb.matrix(f"{prefix}.{side}.u", 3 * h, h)


def bigru(seq: Tensor, p: ParamTree, mask=None) -> Tensor:
    """Forward and backward GRU states, concatenated per step.

    Accepts (T, d_in) or (B, T, d_in). Initial states are zero; with a
    (B, T) mask the backward pass starts at each sequence's last valid step.
    """
    single = seq.ndim == 2
    x = reshape(seq, (1,) + seq.shape) if single else seq
    if mask is not None:
        mask = np.asarray(mask).reshape(x.shape[:2])
    outs = []
    for side, rev in (("fwd", False), ("bwd", True)):
        gx = linear(x, p[f"{side}.w_x"], p[f"{side}.b_x"])
        outs.append(gru_scan(gx, p[f"{side}.u"], mask=mask, reverse=rev))
    out = concat(outs, axis=-1)
    return reshape(out, out.shape[1:]) if single else out
