"""The joint optimizer: per-leaf candidate costs, the exact tree DP, the
rate-distortion trade-off along lambda, and the budgeted lambda search."""

import numpy as np

from evquad.event_codec import PdrSchedule
from evquad.imaging import Frame, bin_events, generate_synthetic_sequence, \
    moving_squares_scene
from evquad.quadtree import Mode
from evquad.rd import (DistortionWeights, LambdaSearchConfig,
                       optimize_tree, precompute_leaf_costs, search_lambda)

seq = generate_synthetic_sequence(moving_squares_scene(
    side=64, n_frames=3, n_shapes=2, speed=2.0, size=16, seed=2,
    textured=True))
frame = seq.frames[2]
prev = seq.frames[1]
volume = bin_events(seq.events[2], 33333, 66666, 4, 64, 64)
weights = DistortionWeights.uniform_unit(64, event_weight=500.0)
schedule = PdrSchedule((1.0, 2.0, 3.0))

tables = precompute_leaf_costs(frame, prev, volume, weights, schedule, 1)

print("lambda sweep (rate in bits, distortion in weighted L1):")
print(f"{'lambda':>10} {'rate':>8} {'distortion':>12} {'leaves':>7} "
      f"{'acquire':>8}")
for lam in (0.0, 0.5, 2.0, 8.0, 32.0, 128.0, 1024.0, 1e9):
    res = optimize_tree(tables, lam)
    n_acq = sum(1 for _r, c in res.plan.leaves if c.mode is Mode.ACQUIRE)
    print(f"{lam:>10.4g} {res.rate_packet:>8} {res.distortion:>12.0f} "
          f"{res.plan.n_leaves:>7} {n_acq:>8}")

budget = 8000
out = search_lambda(tables, LambdaSearchConfig(r_max_bits=budget,
                                               tolerance=0.05))
print(f"\nbudgeted search at {budget} bits: lambda* = {out.lam:.3g}, "
      f"achieved {out.result.rate_packet} bits "
      f"({out.n_evaluations} optimizer calls, boundary={out.boundary})")
print("search trace (lambda, rate, distortion):")
for lam, rate, dist, _j in out.trace:
    print(f"  {lam:>12.4g} {rate:>8} {dist:>12.0f}")
