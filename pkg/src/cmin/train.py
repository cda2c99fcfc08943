"""Optimisation, evaluation and experiment drivers."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import Dataset, steps_to_seconds
from .model import CMIN
from .moment import Prediction, iou
from .params import ParamTree, gradients
from .query import EmbeddingTable

log = logging.getLogger(__name__)

ABLATIONS = (
    ("full", {}),
    ("w/o GCN", {"no_gcn": True}),
    ("w/o SA", {"no_sa": True}),
    ("w/o CG", {"no_cg": True}),
    ("w/o BF", {"no_bf": True}),
)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params: ParamTree, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Checkpoint:
    config: RunConfig
    state: dict[str, np.ndarray]
    feat_dim: int
    epoch: int
    vocabulary: list[str] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def model(self) -> CMIN:
        emb = EmbeddingTable.load_text(self.config.embeddings) if self.config.embeddings else None
        m = CMIN(self.config, self.feat_dim, embeddings=emb, vocabulary=self.vocabulary)
        m.params.load_state(self.state)
        return m

    def save(self, path) -> None:
        meta = {"config": self.config.to_text(), "feat_dim": self.feat_dim, "epoch": self.epoch,
                "vocabulary": self.vocabulary, "history": self.history}
        arrays = {f"param/{k}": v for k, v in self.state.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode("utf8"), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode("utf8"))
            state = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        return cls(RunConfig.from_text(meta["config"]), state, meta["feat_dim"], meta["epoch"],
                   meta["vocabulary"], meta["history"])


def build_model(config: RunConfig, train: Dataset) -> CMIN:
    feat_dim = next(iter(train.features.values())).dim
    emb = EmbeddingTable.load_text(config.embeddings) if config.embeddings else None
    vocab = sorted({t for q in train.queries for t in q.tokens}) if config.train_embeddings else []
    return CMIN(config, feat_dim, embeddings=emb, vocabulary=vocab)


def _clip(grads: dict[str, np.ndarray], limit: float) -> dict[str, np.ndarray]:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= limit:
        return grads
    return {k: g * (limit / norm) for k, g in grads.items()}


def train(config: RunConfig, train_set: Dataset, model: CMIN | None = None) -> Checkpoint:
    """Mini-batch Adam on the joint alignment + regression loss.

    Initialisation and batch order both derive from ``config.seed``.
    """
    if not len(train_set):
        raise ValueError("training set is empty")
    model = model or build_model(config, train_set)
    params = model.params.trainable()
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    order_rng = np.random.default_rng([config.seed, 1])
    history = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for bi, batch in enumerate(model.batches(train_set, order)):
            loss = model.loss(batch)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            grads = gradients(loss, params)
            if config.grad_clip > 0:
                grads = _clip(grads, config.grad_clip)
            opt.step(grads)
            total += value * len(batch.samples)
            seen += len(batch.samples)
        history.append(total / seen)
        log.info("epoch %d loss %.5f", epoch + 1, history[-1])
    return Checkpoint(config, model.params.state(), model.feat_dim, config.epochs,
                      list(model.vocabulary), history)


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    values: dict[tuple[int, float], float]
    ious: list[list[float]]
    runtime: float = 0.0

    def record(self) -> dict:
        return {"metrics": {f"R@{n},IoU={m:g}": v for (n, m), v in self.values.items()},
                "queries": len(self.ious), "runtime_s": self.runtime}


def recall(ious: Sequence[Sequence[float]], criteria) -> dict[tuple[int, float], float]:
    """R(n, m): share of queries with some top-n IoU strictly above m."""
    out = {}
    for n, m in criteria:
        hits = [any(x > m for x in q[:n]) for q in ious]
        out[(n, m)] = float(np.mean(hits)) if hits else 0.0
    return out


def ranked_ious(preds: list[list[Prediction]], ds: Dataset) -> list[list[float]]:
    return [[iou((p.start, p.end), ds.steps(q)) for p in ps] for ps, q in zip(preds, ds.queries)]


def evaluate(model: CMIN | Checkpoint, ds: Dataset, criteria=None) -> MetricsReport:
    if isinstance(model, Checkpoint):
        model = model.model()
    criteria = criteria or model.config.criteria
    t0 = time.perf_counter()
    preds = model.predict(ds, top_k=max(n for n, _ in criteria))
    ious = ranked_ious(preds, ds)
    return MetricsReport(recall(ious, criteria), ious, time.perf_counter() - t0)


def prediction_records(model: CMIN, ds: Dataset, top_k: int = 5) -> list[dict]:
    """One record per query with ranked moments in steps and seconds."""
    out = []
    for ps, q in zip(model.predict(ds, top_k=top_k), ds.queries):
        n = ds.features[q.video_id].n
        out.append({
            "query_id": q.query_id,
            "moments": [{"start_step": p.start, "end_step": p.end,
                         "start_sec": steps_to_seconds(p.start, n, q.duration),
                         "end_sec": steps_to_seconds(p.end, n, q.duration),
                         "score": p.score} for p in ps],
        })
    return out


def ablate(config: RunConfig, train_set: Dataset, test_set: Dataset, criteria=None) -> dict[str, MetricsReport]:
    """Full model plus each single-component ablation, one shared seed."""
    table = {}
    for name, flags in ABLATIONS:
        ck = train(config.replace(**flags), train_set)
        table[name] = evaluate(ck, test_set, criteria)
    return table


def layer_sweep(config: RunConfig, train_set: Dataset, test_set: Dataset, layers: Sequence[int]):
    """Rows (l, R@1 IoU=0.3, R@1 IoU=0.5) for each GCN depth."""
    if not layers:
        raise ValueError("need at least one layer count")
    rows = []
    for l in layers:
        ck = train(config.replace(gcn_layers=l, no_gcn=False), train_set)
        r = evaluate(ck, test_set, ((1, 0.3), (1, 0.5))).values
        rows.append((l, r[(1, 0.3)], r[(1, 0.5)]))
    return rows


def format_table(table: dict[str, MetricsReport]) -> str:
    keys = list(next(iter(table.values())).values)
    head = "model".ljust(10) + "".join(f"R@{n},IoU={m:g}".rjust(14) for n, m in keys)
    lines = [head]
    for name, rep in table.items():
        lines.append(name.ljust(10) + "".join(f"{rep.values[k]:14.4f}" for k in keys))
    return "\n".join(lines)
