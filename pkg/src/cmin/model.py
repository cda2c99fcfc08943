"""The full retrieval network over padded mini-batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .config import RunConfig
from .data import Dataset, QueryRecord
from .interaction import add_interaction_params, interact
from .layers import add_bigru, bigru
from .moment import (CandidateSet, Prediction, add_head_params, enumerate_candidates,
                     masked_alignment, masked_regression, predict, regression_targets,
                     score_offsets, soft_labels, total_loss)
from .params import ParamBuilder, ParamTree
from .query import DepGraph, EmbeddingTable, LabelVocab, graph_arrays, syngcn_stack, add_gcn_params
from .tensor import Tensor, add, mul, no_grad, take_rows
from .video import add_video_params, encode_video


class Sample(NamedTuple):
    query: QueryRecord
    frames: np.ndarray          # (n, d)
    words: np.ndarray           # (m, E) frozen embeddings
    word_ids: np.ndarray        # (m,) rows of the trainable table, -1 when absent
    adjacency: np.ndarray       # (3, m, m)
    label_counts: np.ndarray    # (m, L)
    target: tuple[float, float]
    cands: CandidateSet
    labels: np.ndarray          # (n, k) cleared IoU
    deltas: np.ndarray          # (n, k, 2)
    member: np.ndarray          # (n, k)


@dataclass
class Batch:
    samples: list[Sample]
    frames: np.ndarray
    frame_mask: np.ndarray
    words: np.ndarray
    word_ids: np.ndarray
    word_mask: np.ndarray
    adjacency: np.ndarray
    label_counts: np.ndarray
    valid: np.ndarray
    labels: np.ndarray
    deltas: np.ndarray
    member: np.ndarray


class CMIN:
    """Query encoder, video encoder, cross-modal fusion and moment head.

    Parameters are created from ``config.seed``; the ablation flags in the
    config decide which blocks exist.
    """

    def __init__(self, config: RunConfig, feat_dim: int, embeddings: EmbeddingTable | None = None,
                 vocabulary: Sequence[str] = (), labels: LabelVocab | None = None):
        self.config = config.validate()
        self.feat_dim = feat_dim
        self.dtype = np.dtype(config.dtype)
        self.embeddings = embeddings or EmbeddingTable(dim=config.embed_dim)
        self.labels = labels or LabelVocab()
        self.vocabulary = list(vocabulary)
        self._word_index = {w: i for i, w in enumerate(self.vocabulary)}
        self._cache: dict[tuple[int, str], Sample] = {}
        self.params = self._build(np.random.default_rng(config.seed))

    def _build(self, rng) -> ParamTree:
        c = self.config
        pb = ParamBuilder(rng, dtype=self.dtype)
        E, width = self.embeddings.dim, c.hidden
        if c.train_embeddings:
            if not self.vocabulary:
                raise ValueError("trainable embeddings need a vocabulary")
            table = np.stack([self.embeddings.lookup(w) for w in self.vocabulary]).astype(self.dtype)
            pb._add("query.embedding", table)
        add_bigru(pb, "query.gru", E, width)
        add_gcn_params(pb, "query.gcn", width, len(self.labels), c.layers, mode=c.gcn_mode)
        if c.no_sa:
            pb.matrix("video.proj.w", width, self.feat_dim)
            pb.bias("video.proj.b", width)
            add_bigru(pb, "video.gru", width, width)
        else:
            add_video_params(pb, "video", self.feat_dim, width, c.heads, width)
        add_interaction_params(pb, "cross", width, gate=not c.no_cg, bilinear=not c.no_bf)
        add_head_params(pb, "head", width, width, len(c.widths))
        return pb.tree

    # ------------------------------------------------------------ batching

    def sample(self, ds: Dataset, q: QueryRecord) -> Sample:
        key = (id(ds), q.query_id)
        hit = self._cache.get(key)
        if hit is not None and hit.query is q:
            return hit
        c = self.config
        feats = ds.features[q.video_id]
        n = feats.n
        graph = DepGraph.from_parse(len(q.tokens), q.edges, self.labels)
        adj, counts = graph_arrays(graph, len(self.labels), dtype=self.dtype)
        target = ds.steps(q)
        cands = enumerate_candidates(n, c.widths)
        labels, _ = soft_labels(target, cands, c.clear_threshold)
        deltas, member = regression_targets(target, cands, c.high_threshold)
        words = np.stack([self.embeddings.lookup(t) for t in q.tokens]).astype(self.dtype)
        ids = np.array([self._word_index.get(t, -1) for t in q.tokens], dtype=np.int64)
        s = Sample(q, feats.matrix.astype(self.dtype), words, ids, adj, counts, target, cands,
                   labels, deltas, member)
        self._cache[key] = s
        return s

    def collate(self, samples: list[Sample]) -> Batch:
        B = len(samples)
        N = max(s.frames.shape[0] for s in samples)
        M = max(s.words.shape[0] for s in samples)
        k, L, dt = len(self.config.widths), len(self.labels), self.dtype
        frames = np.zeros((B, N, self.feat_dim), dt)
        fmask = np.zeros((B, N), dt)
        words = np.zeros((B, M, self.embeddings.dim), dt)
        ids = np.full((B, M), -1, np.int64)
        wmask = np.zeros((B, M), dt)
        adj = np.zeros((B, 3, M, M), dt)
        counts = np.zeros((B, M, L), dt)
        valid = np.zeros((B, N, k), dt)
        labels = np.zeros((B, N, k), dt)
        deltas = np.zeros((B, N, k, 2), dt)
        member = np.zeros((B, N, k), dt)
        for b, s in enumerate(samples):
            n, m = s.frames.shape[0], s.words.shape[0]
            frames[b, :n] = s.frames
            fmask[b, :n] = 1.0
            words[b, :m] = s.words
            ids[b, :m] = s.word_ids
            wmask[b, :m] = 1.0
            adj[b, :, :m, :m] = s.adjacency
            counts[b, :m] = s.label_counts
            valid[b, :n] = s.cands.valid
            labels[b, :n] = s.labels
            deltas[b, :n] = s.deltas
            member[b, :n] = s.member
        return Batch(samples, frames, fmask, words, ids, wmask, adj, counts, valid, labels, deltas, member)

    def batches(self, ds: Dataset, order: Sequence[int] | None = None, size: int | None = None):
        order = range(len(ds)) if order is None else order
        size = size or self.config.batch_size
        order = list(order)
        for i in range(0, len(order), size):
            yield self.collate([self.sample(ds, ds.queries[j]) for j in order[i:i + size]])

    # ------------------------------------------------------------ forward

    def word_inputs(self, batch: Batch):
        if not self.config.train_embeddings:
            return batch.words
        known = batch.word_ids >= 0
        rows = take_rows(self.params["query.embedding"], np.where(known, batch.word_ids, 0))
        keep = np.repeat(known[..., None], rows.shape[-1], axis=-1).astype(self.dtype)
        return add(mul(rows, keep), batch.words * (1.0 - keep))

    def encode_query(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """(BiGRU states, GCN output) for the batch's words."""
        hq = bigru(self.word_inputs(batch), self.params.sub("query.gru"), mask=batch.word_mask)
        ol = syngcn_stack(hq, (batch.adjacency, batch.label_counts), self.params.sub("query.gcn"),
                          self.config.layers, mode=self.config.gcn_mode)
        return hq, ol

    def forward(self, batch: Batch, trace: dict | None = None) -> tuple[Tensor, Tensor]:
        c = self.config
        _, ol = self.encode_query(batch)
        hv = encode_video(batch.frames, self.params.sub("video"), c.heads, mask=batch.frame_mask,
                          use_self_attention=not c.no_sa)
        f = interact(hv, ol, self.params.sub("cross"), word_mask=batch.word_mask,
                     use_gate=not c.no_cg, use_bilinear=not c.no_bf, trace=trace)
        hf = bigru(f, self.params.sub("head.gru"), mask=batch.frame_mask)
        if trace is not None:
            trace.update(query=ol, video=hv, fused=f, final=hf)
        return score_offsets(hf, self.params.sub("head"))

    def loss(self, batch: Batch, parts: dict | None = None) -> Tensor:
        c = self.config
        cs, off = self.forward(batch)
        align = masked_alignment(cs, batch.labels, batch.valid)
        reg = masked_regression(off, batch.deltas, batch.member)
        if parts is not None:
            parts.update(align=align.item(), reg=reg.item())
        return total_loss(align, reg, c.alpha)

    def predict(self, ds: Dataset, top_k: int = 1, batch_size: int | None = None) -> list[list[Prediction]]:
        out = []
        with no_grad():
            for batch in self.batches(ds, size=batch_size):
                cs, off = self.forward(batch)
                for b, s in enumerate(batch.samples):
                    n = s.frames.shape[0]
                    out.append(predict(cs.data[b, :n], off.data[b, :n], s.cands,
                                       self.config.nms_threshold, top_k))
        return out

    def attention_maps(self, ds: Dataset) -> list[np.ndarray]:
        """Frame-to-word weight matrices (n, m) per query, as used in aggregation."""
        maps = []
        with no_grad():
            for batch in self.batches(ds):
                trace: dict = {}
                self.forward(batch, trace=trace)
                w = trace["attention"].data
                for b, s in enumerate(batch.samples):
                    maps.append(w[b, :s.frames.shape[0], :s.words.shape[0]].copy())
        return maps
