import logging

import numpy as np
import pytest

from cmin.layers import add_bigru, bigru
from cmin.params import ParamBuilder, ParamTree
from cmin.query import (AGAINST, ALONG, LOOP, SELF, UNK, DepGraph, EmbeddingTable, LabelVocab,
                        add_gcn_params, embed_tokens, graph_arrays, syngcn_layer, syngcn_stack)
from cmin.tensor import Tensor


def gru_params(d_in, width, seed=0, zero=False):
    pb = ParamBuilder(np.random.default_rng(seed))
    add_bigru(pb, "g", d_in, width)
    tree = pb.tree.sub("g")
    if zero:
        tree.zero_()
    return tree


def gcn_params(width, n_labels, layers, seed=0, mode="syntactic", scale=1.0):
    pb = ParamBuilder(np.random.default_rng(seed))
    add_gcn_params(pb, "gcn", width, n_labels, layers, mode=mode)
    tree = pb.tree.sub("gcn")
    for k, v in tree.items():
        v.data = np.random.default_rng(hash(k) % 2**32).standard_normal(v.shape) * scale
    return tree


# ---------------------------------------------------------------- embeddings


def test_known_token_returns_stored_row():
    row = np.linspace(-1, 1, 300)
    table = EmbeddingTable({"ball": row, "boy": np.zeros(300)})
    np.testing.assert_array_equal(embed_tokens(["ball"], table)[0], row)


def test_oov_is_deterministic_and_unit_norm():
    table = EmbeddingTable(dim=300)
    a = embed_tokens(["zyzzyva"], table)
    b = EmbeddingTable(dim=300).lookup("zyzzyva")
    np.testing.assert_array_equal(a[0], b)
    assert np.linalg.norm(a[0]) == pytest.approx(1.0, abs=1e-6)
    assert not np.array_equal(table.lookup("zyzzyva"), table.lookup("aardvark"))


def test_empty_query_rejected():
    with pytest.raises(ValueError):
        embed_tokens([], EmbeddingTable())


def test_load_text_embeddings(tmp_path):
    p = tmp_path / "vec.txt"
    p.write_text("ball 0.5 1.5 -2\ncup 1 2 3\n")
    table = EmbeddingTable.load_text(p)
    assert table.dim == 3
    np.testing.assert_array_equal(table.lookup("ball"), [0.5, 1.5, -2.0])


# ---------------------------------------------------------------- BiGRU


def test_bigru_zero_weights_give_zero_states():
    out = bigru(Tensor(np.random.default_rng(0).standard_normal((5, 7))), gru_params(7, 8, zero=True))
    assert out.shape == (5, 8)
    assert np.all(out.data == 0.0)


def test_bigru_single_step_concatenates_both_cells():
    p = gru_params(4, 6, seed=2)
    x = np.random.default_rng(1).standard_normal(4)

    def one_step(cell):
        # from a zero state the update is z * c with c = tanh(W_c x + b_c)
        g = p[f"{cell}.w_x"].data @ x + p[f"{cell}.b_x"].data
        z = 1.0 / (1.0 + np.exp(-g[:3]))
        return z * np.tanh(g[6:])

    out = bigru(Tensor(x[None]), p).data
    np.testing.assert_allclose(out[0], np.concatenate([one_step("fwd"), one_step("bwd")]), atol=1e-14)


def test_bigru_reversal_swaps_directions():
    p = gru_params(3, 10, seed=4)
    x = np.random.default_rng(2).standard_normal((6, 3))
    orig = bigru(Tensor(x), p).data
    # give the forward cell the backward cell's weights, then run on the reversed input
    mirrored = ParamTree({**p._entries, **{k.replace("bwd", "fwd"): v for k, v in p.items() if "bwd" in k}})
    rev = bigru(Tensor(x[::-1].copy()), mirrored).data
    np.testing.assert_allclose(rev[:, :5], orig[::-1, 5:], atol=1e-14)


def test_bigru_width_is_512():
    p = gru_params(300, 512, seed=0)
    for n in (1, 3):
        assert bigru(Tensor(np.ones((n, 300))), p).shape == (n, 512)


# ---------------------------------------------------------------- graphs


def test_graph_adds_one_self_loop_per_node():
    g = DepGraph(3, [(0, 1, 5), (2, 1, 6)])
    loops = [e for e in g.edges if e[0] == e[1]]
    assert loops == [(0, 0, SELF), (1, 1, SELF), (2, 2, SELF)]


@pytest.mark.parametrize("edges", [[(0, 3, 5)], [(0, 1, 5), (0, 1, 6)], [(-1, 0, 5)], [(1, 1, 5)]])
def test_graph_rejects_bad_edges(edges):
    with pytest.raises(ValueError):
        DepGraph(3, edges)


def test_unknown_label_maps_to_unk_with_warning(caplog):
    vocab = LabelVocab()
    with caplog.at_level(logging.WARNING):
        assert vocab.id("not-a-relation") == UNK
    assert "not-a-relation" in caplog.text
    assert vocab.id("nmod:poss") == vocab.id("nmod")
    with caplog.at_level(logging.WARNING):
        adj, counts = graph_arrays(DepGraph(2, [(0, 1, 999)]), len(vocab))
    assert counts[0, UNK] == 1 and counts[1, UNK] == 1


# ---------------------------------------------------------------- syntactic GCN


def brute_force_layer(H, graph, p):
    """Message passing straight from the definition: dir 1 = edge i->j, dir 2 = edge j->i, dir 3 = self."""
    m, d = H.shape
    out = np.zeros_like(H)
    for i in range(m):
        acc = np.zeros(d)
        for h, dep, lab in graph.edges:
            if h == dep == i:
                acc += p["w3"].data @ H[i] + p["b"].data[lab]
            elif h == i:
                acc += p["w1"].data @ H[dep] + p["b"].data[lab]
            elif dep == i:
                acc += p["w2"].data @ H[h] + p["b"].data[lab]
        out[i] = np.maximum(acc, 0.0) + H[i]
    return out


def test_zero_parameters_are_identity():
    p = gcn_params(8, 5, 1, scale=0.0).sub("0")
    H = np.random.default_rng(0).standard_normal((4, 8))
    g = DepGraph(4, [(0, 1, 2), (1, 2, 3), (3, 2, 4)])
    np.testing.assert_array_equal(syngcn_layer(Tensor(H), g, p).data, H)


def test_single_node_self_loop_only():
    p = gcn_params(3, 4, 1).sub("0")
    h = np.array([[0.3, -1.2, 0.7]])
    want = np.maximum(p["w3"].data @ h[0] + p["b"].data[SELF], 0) + h[0]
    np.testing.assert_allclose(syngcn_layer(Tensor(h), DepGraph(1), p).data[0], want, atol=1e-15)


def test_two_node_edge_directions():
    p = gcn_params(3, 4, 1).sub("0")
    H = np.array([[1.0, 0.5, -0.5], [0.2, -0.3, 0.9]])
    g = DepGraph(2, [(0, 1, 2)])
    # node 0 is the head: it hears node 1 through W1; node 1 hears node 0 through W2
    w1, w2, w3, b = (p[k].data for k in ("w1", "w2", "w3", "b"))
    n0 = np.maximum(w1 @ H[1] + b[2] + w3 @ H[0] + b[SELF], 0) + H[0]
    n1 = np.maximum(w2 @ H[0] + b[2] + w3 @ H[1] + b[SELF], 0) + H[1]
    out = syngcn_layer(Tensor(H), g, p).data
    np.testing.assert_allclose(out, np.stack([n0, n1]), atol=1e-14)
    adj, _ = graph_arrays(g, 4)
    assert adj[ALONG, 0, 1] == 1 and adj[AGAINST, 1, 0] == 1 and adj[LOOP].trace() == 2


def test_layer_matches_brute_force_on_random_graphs(rng):
    for trial in range(20):
        m = int(rng.integers(1, 7))
        edges, seen = [], set()
        for _ in range(int(rng.integers(0, 2 * m))):
            h, d = (int(x) for x in rng.integers(0, m, size=2))
            if h != d and (h, d) not in seen:
                seen.add((h, d))
                edges.append((h, d, int(rng.integers(0, 6))))
        g = DepGraph(m, edges)
        p = gcn_params(4, 6, 1, seed=trial).sub("0")
        H = rng.standard_normal((m, 4))
        np.testing.assert_allclose(syngcn_layer(Tensor(H), g, p).data, brute_force_layer(H, g, p), atol=1e-12)


def test_original_mode_is_undirected_shared_weight():
    p = gcn_params(3, 1, 1, mode="original").sub("0")
    H = np.random.default_rng(4).standard_normal((3, 3))
    g = DepGraph(3, [(0, 1, 2), (2, 1, 3)])
    want = np.zeros_like(H)
    nbrs = {0: [0, 1], 1: [0, 1, 2], 2: [1, 2]}
    for i, js in nbrs.items():
        want[i] = np.maximum(sum(p["w"].data @ H[j] + p["b"].data for j in js), 0) + H[i]
    np.testing.assert_allclose(syngcn_layer(Tensor(H), g, p, mode="original").data, want, atol=1e-14)
    flipped = DepGraph(3, [(1, 0, 2), (1, 2, 3)])
    np.testing.assert_allclose(syngcn_layer(Tensor(H), flipped, p, mode="original").data, want, atol=1e-14)


def test_stack_identities():
    H = np.random.default_rng(5).standard_normal((4, 6))
    g = DepGraph(4, [(0, 1, 2), (2, 1, 3), (2, 3, 4)])
    np.testing.assert_array_equal(syngcn_stack(Tensor(H), g, ParamTree(), 0).data, H)
    np.testing.assert_array_equal(syngcn_stack(Tensor(H), g, gcn_params(6, 5, 2, scale=0.0), 2).data, H)
    p = gcn_params(6, 5, 2, scale=0.3)
    once = syngcn_layer(Tensor(H), g, p.sub("0"))
    twice = syngcn_layer(once, g, p.sub("1"))
    np.testing.assert_array_equal(syngcn_stack(Tensor(H), g, p, 2).data, twice.data)


def test_permutation_equivariance(rng):
    for trial in range(10):
        m = 6
        edges = [(i, i + 1, int(rng.integers(2, 8))) if rng.random() < 0.5 else (i + 1, i, 3) for i in range(m - 1)]
        g = DepGraph(m, edges)
        perm = rng.permutation(m)        # node i becomes node perm[i]
        gp = DepGraph(m, [(int(perm[h]), int(perm[d]), lab) for h, d, lab in edges])
        H = rng.standard_normal((m, 5))
        Hp = np.empty_like(H)
        Hp[perm] = H
        p = gcn_params(5, 8, 2, seed=trial, scale=0.4)
        out = syngcn_stack(Tensor(H), g, p, 2).data
        outp = syngcn_stack(Tensor(Hp), gp, p, 2).data
        np.testing.assert_allclose(outp[perm], out, atol=1e-12)


def undirected_distances(g):
    m = g.node_count
    dist = np.full((m, m), np.inf)
    for s in range(m):
        dist[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for h, d, _ in g.edges:
                    for a, b in ((h, d), (d, h)):
                        if a == u and dist[s, b] == np.inf:
                            dist[s, b] = dist[s, u] + 1
                            nxt.append(b)
            frontier = nxt
    return dist


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_locality(layers, rng):
    m = 7
    g = DepGraph(m, [(i, i + 1, 5) for i in range(m - 1)])
    dist = undirected_distances(g)
    p = gcn_params(4, 8, layers, scale=0.5)
    H = rng.standard_normal((m, 4))
    base = syngcn_stack(Tensor(H), g, p, layers).data
    for u in range(m):
        H2 = H.copy()
        H2[u] += rng.standard_normal(4)
        changed = np.any(syngcn_stack(Tensor(H2), g, p, layers).data != base, axis=1)
        assert not np.any(changed & (dist[u] > layers))
