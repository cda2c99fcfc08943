"""
Self-attention over video frames
================================

Frames are projected, passed through a residual multi-head self-attention
block and a BiGRU. We plant a repeated pattern and look at where frame 5
attends.
"""

import numpy as np

from cmin.params import ParamBuilder
from cmin.video import add_video_params, encode_video, multi_head

rng = np.random.default_rng(2)
frames = rng.standard_normal((30, 12)) * 0.3
pattern = rng.standard_normal(12)
for t in (5, 6, 24, 25):
    frames[t] += 3 * pattern

pb = ParamBuilder(rng)
add_video_params(pb, "video", feat_dim=12, d_model=16, heads=4, width=16)
p = pb.tree.sub("video")

states = encode_video(frames, p, heads=4)
print("encoded video", states.shape)

# peek at the attention weights inside the block
proj = frames @ p["proj.w"].data.T + p["proj.b"].data
weights = []
multi_head(proj, proj, proj, p.sub("attn"), 4, weights_out=weights)
w = weights[0].data.mean(axis=0)           # average over heads
print("frame 5 attends most to frames", np.argsort(-w[5])[:4])
print("every row sums to one:", np.allclose(w.sum(axis=1), 1.0))
