#!/usr/bin/env python3
"""Adaptive timestep weighting during calibration.

Losses at different sampler timesteps differ by orders of magnitude. A
plain average lets the loudest timestep dominate every gradient. The
weighter keeps an exponential running average of the loss per timestep and
down-weights whichever timesteps currently dominate:

    weight(t) = (1 - avg_t / sum_of_avgs) ** alpha

Weights are read before the averages are updated with a batch, so a batch
never reweights itself.
"""

import numpy as np

from denoq.tensor import Rng
from denoq.timestep_weighting import TimestepWeighter


def main():
    steps = [100, 200, 300, 400]
    w = TimestepWeighter(steps, alpha=1.0, xi=0.95)

    print("before any update every timestep weighs 1.0:")
    print("  " + ", ".join(f"t={t}: {w.weight(t):.3f}" for t in steps))

    # simulate a calibration loop where t=100 is persistently 50x louder
    rng = Rng(0)
    scale = {100: 50.0, 200: 1.0, 300: 0.8, 400: 1.2}
    for it in range(60):
        batch_t = rng.child(f"t{it}").integers(0, 4, 32)
        ts = np.array(steps)[batch_t]
        losses = np.array([scale[int(t)] for t in ts]) * (
            1.0 + 0.1 * rng.child(f"l{it}").standard_normal((32,))
        )
        w.weighted_mean(losses, ts)

    print("\nafter 60 batches where t=100 is ~50x louder than the rest:")
    for t in steps:
        print(f"  t={t}: running avg {w.running_average(t):7.2f}"
              f"   weight {w.weight(t):.3f}")

    print("\nworked examples:")
    w2 = TimestepWeighter([1, 2], alpha=1.0)
    w2.update(1, 1.0)
    w2.update(2, 3.0)
    print(f"  averages (1, 3), alpha=1 -> weights "
          f"({w2.weight(1):.2f}, {w2.weight(2):.2f})")
    w3 = TimestepWeighter([9], xi=0.95)
    w3.update(9, 2.0)
    w3.update(9, 4.0)
    print(f"  momentum: 0.95 * 2 + 0.05 * 4 = {w3.running_average(9):.2f}")
    print("\nalpha = 0 turns the mechanism off; larger alpha sharpens it.")


if __name__ == "__main__":
    main()
