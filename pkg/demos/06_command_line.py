"""
The command line, end to end
============================

Everything the library does is also reachable through ``cmin`` (or
``python -m cmin``). This script drives the same entry point in-process.
"""

import tempfile
from pathlib import Path

from cmin.cli import main

work = Path(tempfile.mkdtemp())
data, ck = work / "data", work / "model.npz"
conf = work / "run.conf"
conf.write_text("hidden = 16\nheads = 2\nembed_dim = 16\nbatch_size = 16\nlr = 0.003\nepochs = 2\n"
                "widths = 8, 12, 16, 20, 24, 28, 32\n")

main(["synth", "--out", str(data), "--set", "n_train=120", "--set", "n_test=30"])
main(["stats", "--data", str(data)])
main(["train", "--data", str(data), "--config", str(conf), "--out", str(ck)])
main(["eval", "--data", str(data), "--checkpoint", str(ck)])
main(["predict", "--data", str(data), "--checkpoint", str(ck), "--top-k", "2", "--out", str(work / "pred.jsonl")])
print((work / "pred.jsonl").read_text().splitlines()[0])
main(["export-attention", "--data", str(data), "--checkpoint", str(ck), "--out", str(work / "attn")])
main(["gradcheck", "--data", str(data), "--config", str(conf), "--set", "hidden=4", "--set", "embed_dim=4",
      "--samples", "1"])
