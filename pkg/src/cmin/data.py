"""Dataset ingestion, on-disk formats and the synthetic generator.

Feature files (``.bin``)::

    bytes 0-3   magic b"CMNF"
    bytes 4-7   n, uint32 little-endian (frame count)
    bytes 8-11  d, uint32 little-endian (feature width)
    then        n*d float32 little-endian values, row-major

Query files are JSON lines, one object per query with the keys
``query_id`` (str), ``video_id`` (str), ``tokens`` (list of str),
``edges`` (list of ``[head, dependent, label]``), ``start`` and ``end``
(seconds) and ``duration`` (seconds).

A dataset directory holds ``features/<video_id>.bin`` plus one
``<split>.jsonl`` per split.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"CMNF"
HEADER = struct.Struct("<4sII")
DEFAULT_CAP = 200


class FormatError(ValueError):
    pass


@dataclass
class VideoFeatures:
    video_id: str
    matrix: np.ndarray
    original_length: int | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] == 0:
            raise FormatError(f"video {self.video_id}: expected a non-empty (n, d) matrix, got {self.matrix.shape}")
        if self.original_length is None:
            self.original_length = self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class QueryRecord:
    query_id: str
    video_id: str
    tokens: list[str]
    edges: list[tuple[int, int, str]]
    start: float
    end: float
    duration: float

    def validate(self) -> "QueryRecord":
        if not self.tokens:
            raise FormatError(f"query {self.query_id}: no tokens")
        if not (0.0 <= self.start < self.end <= self.duration):
            raise FormatError(f"query {self.query_id}: need 0 <= start < end <= duration, "
                              f"got ({self.start}, {self.end}) with duration {self.duration}")
        m = len(self.tokens)
        for h, d, _ in self.edges:
            if not (0 <= h < m and 0 <= d < m):
                raise FormatError(f"query {self.query_id}: edge ({h}, {d}) outside {m} tokens")
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        d["edges"] = [list(e) for e in self.edges]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "QueryRecord":
        keys = ("query_id", "video_id", "tokens", "edges", "start", "end", "duration")
        missing = [k for k in keys if k not in obj]
        if missing:
            raise FormatError(f"missing fields {missing}")
        edges = []
        for e in obj["edges"]:
            if len(e) != 3 or not isinstance(e[0], int) or not isinstance(e[1], int):
                raise FormatError(f"bad edge {e!r}; expected [head, dependent, label]")
            edges.append((e[0], e[1], str(e[2])))
        if not isinstance(obj["tokens"], list) or not all(isinstance(t, str) for t in obj["tokens"]):
            raise FormatError("tokens must be a list of strings")
        return cls(str(obj["query_id"]), str(obj["video_id"]), list(obj["tokens"]), edges,
                   float(obj["start"]), float(obj["end"]), float(obj["duration"])).validate()


def seconds_to_steps(t: float, n: int, duration: float) -> float:
    return t * n / duration


def steps_to_seconds(x: float, n: int, duration: float) -> float:
    return x * duration / n


def downsample_indices(n: int, cap: int) -> np.ndarray:
    """Uniform subsample ``floor(t * n / cap)``; identity when n <= cap."""
    if n <= cap:
        return np.arange(n)
    return (np.arange(cap) * n) // cap


def write_features(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2 or m.shape[0] == 0:
        raise FormatError(f"feature matrix must be non-empty (n, d), got {m.shape}")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_features(path, cap: int = DEFAULT_CAP, video_id: str | None = None) -> VideoFeatures:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: header needs {HEADER.size} bytes, file has {len(raw)}")
    magic, n, d = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if n == 0 or d == 0:
        raise FormatError(f"{path}: empty feature matrix ({n} x {d})")
    expected = HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n} x {d} features, got {len(raw)}")
    mat = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(mat)):
        raise FormatError(f"{path}: non-finite feature values")
    idx = downsample_indices(n, cap)
    vid = video_id if video_id is not None else Path(path).stem
    return VideoFeatures(vid, mat[idx].astype(np.float32), original_length=n)


def save_queries(path, records: Iterable[QueryRecord]) -> None:
    with open(path, "w", encoding="utf8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def load_queries(path) -> list[QueryRecord]:
    out = []
    with open(path, encoding="utf8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(QueryRecord.from_json(json.loads(line)))
            except (FormatError, json.JSONDecodeError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


@dataclass
class Dataset:
    features: dict[str, VideoFeatures]
    queries: list[QueryRecord]

    def __len__(self):
        return len(self.queries)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        qs = [self.queries[i] for i in idx]
        vids = {q.video_id for q in qs}
        return Dataset({v: f for v, f in self.features.items() if v in vids}, qs)

    def steps(self, q: QueryRecord) -> tuple[float, float]:
        """Target boundaries of ``q`` in time steps of its (possibly downsampled) video."""
        n = self.features[q.video_id].n
        return seconds_to_steps(q.start, n, q.duration), seconds_to_steps(q.end, n, q.duration)


def save_dataset(root, splits: dict[str, Dataset]) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        for vid, feat in sorted(ds.features.items()):
            write_features(root / "features" / f"{vid}.bin", feat.matrix)
        save_queries(root / f"{name}.jsonl", ds.queries)


def load_dataset(root, split: str, cap: int = DEFAULT_CAP) -> Dataset:
    root = Path(root)
    queries = load_queries(root / f"{split}.jsonl")
    feats = {}
    for q in queries:
        if q.video_id not in feats:
            path = root / "features" / f"{q.video_id}.bin"
            if not path.exists():
                raise FormatError(f"query {q.query_id}: missing feature file {path}")
            feats[q.video_id] = load_features(path, cap=cap, video_id=q.video_id)
    return Dataset(feats, queries)


def dataset_stats(ds: Dataset) -> dict:
    """Count, mean video time, mean target time and mean query length."""
    if not ds.queries:
        return {"number": 0, "video_time": 0.0, "target_time": 0.0, "query_len": 0.0}
    return {
        "number": len(ds.queries),
        "video_time": float(np.mean([q.duration for q in ds.queries])),
        "target_time": float(np.mean([q.end - q.start for q in ds.queries])),
        "query_len": float(np.mean([len(q.tokens) for q in ds.queries])),
    }


# ---------------------------------------------------------------- synthetic data

CHAIN_LABELS = ("det", "amod", "nsubj", "obj", "advmod", "compound")


@dataclass
class SynthConfig:
    vocab_size: int = 50
    feat_dim: int = 32
    min_len: int = 60
    max_len: int = 120
    min_width: int = 10
    max_width: int = 30
    snr: float = 10.0
    n_train: int = 800
    n_test: int = 200
    seed: int = 7
    min_query: int = 4
    max_query: int = 10
    step_seconds: float = 2.0

    def validate(self) -> "SynthConfig":
        for name in ("vocab_size", "feat_dim", "min_len", "max_len", "min_width", "max_width",
                     "min_query", "max_query", "step_seconds"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.snr <= 0:
            raise ValueError("snr must be positive (use inf for noiseless data)")
        if self.min_len > self.max_len or self.min_width > self.max_width or self.min_query > self.max_query:
            raise ValueError("each range needs min <= max")
        if self.max_width > self.min_len:
            raise ValueError(f"moment widths up to {self.max_width} do not fit videos as short as {self.min_len}")
        return self


@dataclass
class SyntheticSet:
    train: Dataset
    test: Dataset
    signatures: np.ndarray
    vocabulary: list[str] = field(default_factory=list)


def gen_synthetic(cfg: SynthConfig) -> SyntheticSet:
    """Planted-moment dataset: frames inside the target carry the mean
    signature of the query words plus noise, frames outside are noise only.

    Noise standard deviation is ``rms(signal) / snr``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    vocab = [f"w{i:03d}" for i in range(cfg.vocab_size)]
    sigs = rng.standard_normal((cfg.vocab_size, cfg.feat_dim))
    splits = []
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        feats, queries = {}, []
        for k in range(count):
            n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            w = int(rng.integers(cfg.min_width, cfg.max_width + 1))
            s = int(rng.integers(0, n - w + 1))
            m = int(rng.integers(cfg.min_query, cfg.max_query + 1))
            ids = rng.choice(cfg.vocab_size, size=min(m, cfg.vocab_size), replace=False)
            signal = sigs[ids].mean(axis=0)
            sigma = 0.0 if math.isinf(cfg.snr) else float(np.sqrt(np.mean(signal ** 2))) / cfg.snr
            frames = sigma * rng.standard_normal((n, cfg.feat_dim))
            frames[s:s + w] += signal
            edges = []
            for i in range(len(ids) - 1):
                lab = CHAIN_LABELS[int(rng.integers(len(CHAIN_LABELS)))]
                edges.append((i, i + 1, lab) if rng.random() < 0.5 else (i + 1, i, lab))
            vid = f"{split}{k:05d}"
            feats[vid] = VideoFeatures(vid, frames.astype(np.float32))
            queries.append(QueryRecord(f"q_{vid}", vid, [vocab[i] for i in ids], edges,
                                       s * cfg.step_seconds, (s + w) * cfg.step_seconds,
                                       n * cfg.step_seconds).validate())
        splits.append(Dataset(feats, queries))
    return SyntheticSet(splits[0], splits[1], sigs, vocab)
