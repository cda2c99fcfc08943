"""Run configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

ACTIVITY_WIDTHS = (16.0, 32.0, 64.0, 96.0, 128.0, 160.0, 196.0)
TACOS_WIDTHS = (8.0, 16.0, 32.0, 64.0)
DEFAULT_CRITERIA = ((1, 0.3), (1, 0.5), (1, 0.7), (5, 0.3), (5, 0.5), (5, 0.7))


@dataclass
class RunConfig:
    widths: tuple = ACTIVITY_WIDTHS
    clear_threshold: float = 0.3
    high_threshold: float = 0.7
    alpha: float = 0.001
    gcn_layers: int = 2
    gcn_mode: str = "syntactic"
    heads: int = 8
    hidden: int = 512
    embed_dim: int = 300
    train_embeddings: bool = False
    embeddings: str = ""
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    no_gcn: bool = False
    no_sa: bool = False
    no_cg: bool = False
    no_bf: bool = False
    nms_threshold: float = 0.5
    criteria: tuple = DEFAULT_CRITERIA
    cap: int = 200
    dtype: str = "float64"

    def __post_init__(self):
        self.widths = tuple(float(w) for w in self.widths)
        self.criteria = tuple((int(n), float(m)) for n, m in self.criteria)

    def validate(self) -> "RunConfig":
        problems = []
        if not self.widths or any(w <= 0 for w in self.widths):
            problems.append("widths must be a nonempty list of positive values")
        if not 0.0 <= self.clear_threshold < 1.0:
            problems.append("clear_threshold must lie in [0, 1)")
        if not 0.0 < self.high_threshold <= 1.0:
            problems.append("high_threshold must lie in (0, 1]")
        if self.alpha < 0:
            problems.append("alpha must be non-negative")
        if self.gcn_layers < 0:
            problems.append("gcn_layers must be non-negative")
        if self.gcn_mode not in ("syntactic", "original"):
            problems.append("gcn_mode must be 'syntactic' or 'original'")
        if self.hidden < 2 or self.hidden % 2:
            problems.append("hidden must be a positive even number")
        elif self.heads < 1 or self.hidden % self.heads:
            problems.append("heads must divide hidden")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            problems.append("lr >= 0, batch_size >= 1 and epochs >= 0 are required")
        if not 0.0 < self.nms_threshold <= 1.0:
            problems.append("nms_threshold must lie in (0, 1]")
        if any(n < 1 or not 0.0 <= m < 1.0 for n, m in self.criteria):
            problems.append("criteria need n >= 1 and m in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be float32 or float64")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def layers(self) -> int:
        return 0 if self.no_gcn else self.gcn_layers

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ---- text form

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        return (base or cls()).with_overrides(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        """Apply string-valued overrides, parsing each by the field's type."""
        kinds = {f.name: f for f in dataclasses.fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _parse(key, raw, type(getattr(self, key)))
        return self.replace(**changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{n}@{m!r}" for n, m in value)
        return ", ".join(repr(v) for v in value)
    return str(value)


def _parse(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if key == "criteria":
                return tuple((int(s.split("@")[0]), float(s.split("@")[1])) for s in items)
            return tuple(float(s) for s in items)
        return kind(raw)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from exc
