"""Named parameter collections, initialisation, and finite-difference checks."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor, backward


class ParamTree:
    """Flat mapping of dotted names (``video.gru.fwd.w_x``) to leaf tensors.

    Hierarchy is expressed through the name prefixes; :meth:`sub` returns a
    view over one branch that shares the underlying tensors.
    """

    def __init__(self, entries: dict[str, Tensor] | None = None):
        self._entries: dict[str, Tensor] = dict(entries or {})

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        self._entries[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def sub(self, prefix: str) -> "ParamTree":
        p = prefix.rstrip(".") + "."
        return ParamTree({k[len(p):]: v for k, v in self._entries.items() if k.startswith(p)})

    def trainable(self) -> "ParamTree":
        return ParamTree({k: v for k, v in self._entries.items() if v.requires_grad})

    def size(self) -> int:
        return sum(v.data.size for v in self._entries.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._entries.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._entries) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, v in self._entries.items():
            arr = np.asarray(state[k])
            if arr.shape != v.shape:
                raise ValueError(f"parameter {k}: expected shape {v.shape}, got {arr.shape}")
            v.data = arr.astype(v.data.dtype, copy=True)

    def zero_(self) -> None:
        for v in self._entries.values():
            v.data = np.zeros_like(v.data)


class ParamBuilder:
    """Allocates parameters into a :class:`ParamTree` from one RNG."""

    def __init__(self, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        self.rng = rng
        self.dtype = dtype
        self.tree = ParamTree()

    def matrix(self, name: str, rows: int, cols: int) -> Tensor:
        limit = np.sqrt(6.0 / (rows + cols))
        data = self.rng.uniform(-limit, limit, size=(rows, cols)).astype(self.dtype)
        return self._add(name, data)

    def bias(self, name: str, *shape: int) -> Tensor:
        return self._add(name, np.zeros(shape, dtype=self.dtype))

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tree:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.tree[name] = t
        return t


def gradients(root: Tensor, params: ParamTree) -> dict[str, np.ndarray]:
    """Gradient of ``root`` for every parameter, zeros where it does not contribute."""
    got = backward(root)
    return {k: got.get(id(v), np.zeros_like(v.data)) for k, v in params.items()}


def grad_check(loss_fn: Callable[[], Tensor], params: ParamTree, eps: float = 1e-5,
               names: list[str] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments and must rebuild its graph from the current
    values in ``params``. The error for each entry is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    names = names or params.names()
    sub = ParamTree({k: params[k] for k in names})
    analytic = gradients(loss_fn(), sub)
    worst = 0.0
    for k in names:
        t = sub[k]
        flat = t.data.reshape(-1)
        ga = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            err = abs(ga[i] - num) / max(1.0, abs(ga[i]), abs(num))
            worst = max(worst, err)
    return worst
