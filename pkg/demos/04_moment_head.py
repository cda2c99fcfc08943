"""
Anchors, losses and NMS
=======================

The moment head scores k anchors per time step and regresses their
boundaries. This walks through the candidate set, the two losses and the
final ranking for a hand-made target.
"""

import numpy as np

from cmin.moment import (alignment_loss, enumerate_candidates, iou, predict, regression_loss, soft_labels,
                         total_loss)

n, widths = 40, [6.0, 10.0, 16.0]
cands = enumerate_candidates(n, widths)
print(f"{cands.count} of {n * len(widths)} anchors lie inside the video")
print("anchors centred at step 10:", cands.at(10))

target = (12.0, 22.0)
labels, raw = soft_labels(target, cands, clear=0.3)
i, j = np.unravel_index(np.argmax(raw), raw.shape)
print(f"best anchor ({cands.starts[i, j]:g}, {cands.ends[i, j]:g}) with IoU {raw[i, j]:.3f}")

# a scorer that already knows the answer: confidence equal to the soft label
cs = np.clip(labels, 0.01, 0.99)
offsets = np.zeros((n, len(widths), 2))
align = alignment_loss(cs, target, cands)
reg = regression_loss(offsets, target, cands)
print("alignment", align.item(), "regression", reg.item(), "total", total_loss(align, reg).item())

# perfect offsets remove the regression term
offsets[..., 0] = target[0] - cands.starts
offsets[..., 1] = target[1] - cands.ends
print("regression with exact offsets:", regression_loss(offsets, target, cands).item())

for p in predict(cs, np.zeros((n, len(widths), 2)), cands, nms_threshold=0.5, top_k=3):
    print(f"  ({p.start:.1f}, {p.end:.1f}) score {p.score:.3f} IoU {iou((p.start, p.end), target):.3f}")
