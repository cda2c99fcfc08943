"""
Training on planted moments
===========================

The synthetic generator hides a query's signature inside a noisy video. A
small model learns to find it within a couple of epochs; we then save the
checkpoint, reload it and dump one attention map.
"""

import tempfile
from pathlib import Path

from cmin.config import RunConfig
from cmin.data import SynthConfig, gen_synthetic
from cmin.interaction import write_attention
from cmin.train import Checkpoint, evaluate, format_table, train

syn = gen_synthetic(SynthConfig(n_train=200, n_test=50, seed=7))
q = syn.train.queries[0]
print("example query:", " ".join(q.tokens), f"-> ({q.start}, {q.end}) s of {q.duration} s")

config = RunConfig(hidden=32, heads=4, embed_dim=32, batch_size=32, lr=0.003, epochs=3,
                   widths=tuple(float(w) for w in range(8, 33, 4)))
ck = train(config, syn.train)
print("loss per epoch:", [round(x, 4) for x in ck.history])

report = evaluate(ck, syn.test)
print(format_table({"full": report}))

out = Path(tempfile.mkdtemp())
ck.save(out / "model.npz")
again = evaluate(Checkpoint.load(out / "model.npz"), syn.test)
print("reloaded checkpoint gives the same numbers:", again.values == report.values)

maps = ck.model().attention_maps(syn.test.subset([0]))
write_attention(out / "attention.txt", maps[0])
print("attention map", maps[0].shape, "written to", out / "attention.txt")
