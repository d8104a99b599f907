"""Quadtree plans: superpixel values, skip/acquire reconstruction and the
bit-exact segmentation stream."""

import numpy as np

from evquad.imaging import Frame
from evquad.quadtree import (Mode, Rect, deserialize_plan, reconstruct_frame,
                             serialize_plan, superpixel_value, uniform_plan)

rng = np.random.default_rng(0)
frame = Frame(rng.integers(0, 256, (32, 32)).astype(np.uint8))

print("superpixel mean of the top-left 8x8 block:",
      superpixel_value(frame, Rect(0, 0, 8)))

# An all-skip plan copies the previous reconstruction verbatim.
skip_plan = uniform_plan(32, 1, 8, Mode.SKIP)
recon = reconstruct_frame(frame, skip_plan)
print("all-skip reconstruction identical:",
      np.array_equal(recon.pixels, frame.pixels))

# Acquire plans fill each leaf with its transmitted mean.
acq_leaves = []
for rect, _cfg in skip_plan.leaves:
    from evquad.quadtree import LeafConfig
    acq_leaves.append((rect, LeafConfig(Mode.ACQUIRE,
                                        superpixel_value(frame, rect))))
from evquad.quadtree import QuadTreePlan
acq_plan = QuadTreePlan(32, 1, tuple(acq_leaves))
blocky = reconstruct_frame(Frame(np.zeros((32, 32), dtype=np.uint8)),
                           acq_plan)
err = np.abs(blocky.pixels.astype(int) - frame.pixels.astype(int)).mean()
print(f"8x8 acquire mosaic mean abs error: {err:.1f} gray levels")

# Serialization is bit-exact and its length decomposes into
# segmentation + mode + value bits.
data, bits = serialize_plan(acq_plan)
r_seg, r_mode, r_v = acq_plan.rate_decomposition()
print(f"serialized plan: {bits} bits = {r_seg} segmentation "
      f"+ {r_mode} mode + {r_v} value bits")
back, consumed = deserialize_plan(data, 32, 1)
print("round-trip exact:", consumed == bits and
      [(r, c.mode, c.value) for r, c in back.leaves] ==
      [(r, c.mode, c.value) for r, c in acq_plan.leaves])
