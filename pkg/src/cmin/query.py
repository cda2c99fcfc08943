"""Query side: word embeddings, dependency graphs and the syntactic GCN."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .params import ParamBuilder, ParamTree
from .tensor import Tensor, as_tensor, linear, matmul, relu

log = logging.getLogger(__name__)

UD_RELATIONS = (
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp", "clf",
    "compound", "conj", "cop", "csubj", "dep", "det", "discourse", "dislocated",
    "expl", "fixed", "flat", "goeswith", "iobj", "list", "mark", "nmod", "nsubj",
    "nummod", "obj", "obl", "orphan", "parataxis", "punct", "reparandum", "root",
    "vocative", "xcomp",
)
UNK = 0
SELF = 1

# direction slots for the three transformation matrices
ALONG, AGAINST, LOOP = 0, 1, 2


class LabelVocab:
    """Closed relation vocabulary with reserved UNK (0) and SELF (1) ids."""

    def __init__(self, labels: Sequence[str] = UD_RELATIONS):
        self.labels = ["<unk>", "<self>"] + [l for l in labels if l not in ("<unk>", "<self>")]
        self._ids = {l: i for i, l in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def id(self, label: str) -> int:
        # subtypes such as "nmod:poss" fall back to their base relation
        if label not in self._ids and ":" in label:
            label = label.split(":", 1)[0]
        try:
            return self._ids[label]
        except KeyError:
            log.warning("unknown dependency label %r mapped to UNK", label)
            return UNK


@dataclass
class DepGraph:
    """Directed labeled dependency graph over ``node_count`` words.

    ``edges`` holds (head, dependent, label id). A SELF self-loop is added
    for every node at construction.
    """

    node_count: int
    edges: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        m = self.node_count
        if m < 1:
            raise ValueError("dependency graph needs at least one node")
        seen = set()
        clean = []
        for head, dep, lab in self.edges:
            if head == dep:
                if lab == SELF:
                    continue
                raise ValueError(f"self-loop on node {head} in parse edges")
            if not (0 <= head < m and 0 <= dep < m):
                raise ValueError(f"edge ({head}, {dep}) out of range for {m} nodes")
            if (head, dep) in seen:
                raise ValueError(f"duplicate edge ({head}, {dep})")
            seen.add((head, dep))
            clean.append((int(head), int(dep), int(lab)))
        self.edges = clean + [(i, i, SELF) for i in range(m)]

    @classmethod
    def from_parse(cls, node_count: int, edges, vocab: LabelVocab) -> "DepGraph":
        return cls(node_count, [(h, d, vocab.id(l)) for h, d, l in edges])

    def neighbours(self, i: int) -> list[tuple[int, int, int]]:
        """(j, direction slot, label) for every j in the neighbourhood of i."""
        out = []
        for h, d, lab in self.edges:
            if h == d == i:
                out.append((i, LOOP, lab))
            elif h == i:
                out.append((d, ALONG, lab))
            elif d == i:
                out.append((h, AGAINST, lab))
        return out


class GraphArrays(NamedTuple):
    """Dense form of one or more graphs: adjacency (..., 3, m, m) and label counts (..., m, L)."""

    adjacency: np.ndarray
    label_counts: np.ndarray


def graph_arrays(graph: DepGraph, n_labels: int, size: int | None = None, dtype=np.float64) -> GraphArrays:
    """Densify a graph, padding to ``size`` nodes (padded nodes have no edges).

    ``adjacency[dir, i, j]`` is 1 when j is in the neighbourhood of i through
    direction slot ``dir``; ``label_counts[i, l]`` counts neighbours of i whose
    edge carries label l.
    """
    m = size or graph.node_count
    adj = np.zeros((3, m, m), dtype=dtype)
    counts = np.zeros((m, n_labels), dtype=dtype)
    for h, d, lab in graph.edges:
        if not 0 <= lab < n_labels:
            log.warning("label id %d outside the bias table; using UNK", lab)
            lab = UNK
        if h == d:
            adj[LOOP, h, h] = 1.0
            counts[h, lab] += 1.0
        else:
            adj[ALONG, h, d] = 1.0
            adj[AGAINST, d, h] = 1.0
            counts[h, lab] += 1.0
            counts[d, lab] += 1.0
    return GraphArrays(adj, counts)


def add_gcn_params(pb: ParamBuilder, prefix: str, width: int, n_labels: int, layers: int,
                   mode: str = "syntactic") -> None:
    for k in range(layers):
        if mode == "syntactic":
            for d in range(3):
                pb.matrix(f"{prefix}.{k}.w{d + 1}", width, width)
            pb.bias(f"{prefix}.{k}.b", n_labels, width)
        elif mode == "original":
            pb.matrix(f"{prefix}.{k}.w", width, width)
            pb.bias(f"{prefix}.{k}.b", width)
        else:
            raise ValueError(f"unknown GCN mode {mode!r}")


def _label_slots(graph: DepGraph, bias: Tensor, mode: str) -> int:
    # the original GCN ignores labels, so any table wide enough will do
    if mode == "syntactic":
        return bias.shape[0]
    return max(lab for _, _, lab in graph.edges) + 1


def syngcn_layer(H: Tensor, graph, p: ParamTree, mode: str = "syntactic") -> Tensor:
    """One graph-convolution layer with a residual connection.

    ``graph`` is a :class:`DepGraph` or :class:`GraphArrays` (batched arrays
    are allowed). In syntactic mode each neighbour contributes through the
    matrix of its direction slot plus the bias of its edge label; the
    original mode shares one matrix and one bias across all neighbours.
    """
    H = as_tensor(H)
    if isinstance(graph, DepGraph):
        if graph.node_count != H.shape[-2]:
            raise ValueError(f"graph has {graph.node_count} nodes but H has {H.shape[-2]} rows")
        graph = graph_arrays(graph, _label_slots(graph, p["b"], mode), dtype=H.data.dtype)
    adj, counts = graph
    if mode == "syntactic":
        acc = matmul(counts, p["b"])
        for d in range(3):
            acc = acc + matmul(adj[..., d, :, :], linear(H, p[f"w{d + 1}"]))
    else:
        neighbours = adj.sum(axis=-3)
        degree = neighbours.sum(axis=-1, keepdims=True)
        acc = matmul(neighbours, linear(H, p["w"])) + matmul(degree, p["b"].reshape(1, -1))
    return relu(acc) + H


def syngcn_stack(H: Tensor, graph, p: ParamTree, layers: int, mode: str = "syntactic") -> Tensor:
    """Apply ``layers`` independently parameterised GCN layers; 0 returns H."""
    out = as_tensor(H)
    if layers and isinstance(graph, DepGraph):
        graph = graph_arrays(graph, _label_slots(graph, p["0.b"], mode), dtype=out.data.dtype)
    for k in range(layers):
        out = syngcn_layer(out, graph, p.sub(str(k)), mode=mode)
    return out


class EmbeddingTable:
    """Word vectors with a deterministic hashed fallback for unknown words."""

    def __init__(self, vectors: dict[str, np.ndarray] | None = None, dim: int = 300):
        self.vectors = {w: np.asarray(v, dtype=np.float64) for w, v in (vectors or {}).items()}
        if self.vectors:
            dim = len(next(iter(self.vectors.values())))
        self.dim = dim

    @classmethod
    def load_text(cls, path) -> "EmbeddingTable":
        """Read whitespace-separated ``word v1 ... vd`` lines (GloVe text layout)."""
        vectors = {}
        with open(path, encoding="utf8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip().split(" ")
                if len(parts) < 2:
                    continue
                vec = np.array(parts[1:], dtype=np.float64)
                if vectors and len(vec) != len(next(iter(vectors.values()))):
                    raise ValueError(f"{path}:{lineno}: expected {len(next(iter(vectors.values())))} values")
                vectors[parts[0]] = vec
        return cls(vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def pseudo(self, token: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(token.encode("utf8")).digest()[:8], "little")
        v = np.random.default_rng(seed).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def lookup(self, token: str) -> np.ndarray:
        v = self.vectors.get(token)
        return v if v is not None else self.pseudo(token)


def embed_tokens(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    if not tokens:
        raise ValueError("cannot embed an empty query")
    return np.stack([table.lookup(t) for t in tokens])
