"""
Encoding a query with a syntactic GCN
=====================================

A query is embedded, run through a BiGRU, then refined by graph convolution
over its dependency parse. Each edge direction gets its own matrix and each
relation label its own bias.
"""

import numpy as np

from cmin.layers import add_bigru, bigru
from cmin.params import ParamBuilder
from cmin.query import DepGraph, EmbeddingTable, LabelVocab, add_gcn_params, embed_tokens, syngcn_stack

tokens = ["a", "man", "throws", "the", "ball"]
# (head, dependent, relation) as a parser would emit them
parse = [(1, 0, "det"), (2, 1, "nsubj"), (4, 3, "det"), (2, 4, "obj")]

vocab = LabelVocab()
graph = DepGraph.from_parse(len(tokens), parse, vocab)
print("edges with self loops:", graph.edges)
print("neighbours of 'throws':", graph.neighbours(2))

# no pretrained vectors here, so every token gets a hashed unit vector
table = EmbeddingTable(dim=16)
words = embed_tokens(tokens, table)

pb = ParamBuilder(np.random.default_rng(1))
add_bigru(pb, "gru", 16, 8)
add_gcn_params(pb, "gcn", 8, len(vocab), layers=2)
params = pb.tree

hq = bigru(words, params.sub("gru"))
ol = syngcn_stack(hq, graph, params.sub("gcn"), layers=2)
print("BiGRU states", hq.shape, "-> GCN output", ol.shape)
print("change made by the GCN per word:", np.round(np.linalg.norm(ol.data - hq.data, axis=1), 3))

# the original undirected GCN is available for comparison
pb = ParamBuilder(np.random.default_rng(1))
add_gcn_params(pb, "gcn", 8, len(vocab), layers=2, mode="original")
plain = syngcn_stack(hq, graph, pb.tree.sub("gcn"), layers=2, mode="original")
print("original-mode output", plain.shape)
