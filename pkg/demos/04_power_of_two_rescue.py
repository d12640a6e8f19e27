#!/usr/bin/env python3
"""Power-of-two range rescue, and the vote that keeps it honest.

One per-tensor activation scale must cover the widest channel, so a single
wide channel taxes everyone's resolution. Widening individual channels by
2^delta is free at execution time (it folds onto integer weight codes as a
bit shift), which lets the base scale chase the bulk — but only channels
that are *reliably* wide deserve an exponent. Each calibration sample
nominates its preferred exponent per channel and a channel is widened only
when one candidate wins strictly more than a kappa share of the vote.

Three scenarios below: a channel that is always wide, one that is wide in
55% of samples, and one wide in 85% of samples (kappa = 0.6).
"""

import numpy as np

from denoq.pts import calibrate_activation_scaling, per_sample_matrix, vote
from denoq.quant import minmax_scale
from denoq.tensor import Rng

N, C = 400, 12
BITS = 8
D = 3
KAPPA = 0.6


def reconstruction_sse(x, base_scale, exponents):
    scales = base_scale * np.exp2(exponents.astype(np.float64))
    codes = np.clip(np.rint(x / scales[None, :]), -128, 127)
    return float(np.sum((x - codes * scales[None, :]) ** 2))


def wide_values(rng, n):
    # consistently far outside the bulk: |v| in [24, 32], random sign
    return np.sign(rng.standard_normal(n)) * rng.uniform(24.0, 32.0, n)


def describe(title, x):
    s0 = minmax_scale(x, BITS).scale
    plain = reconstruction_sse(x, s0, np.zeros(C, dtype=np.int64))
    base, factors = calibrate_activation_scaling(
        x, bits=BITS, max_exponent=D, kappa=KAPPA
    )
    rescued = reconstruction_sse(x, base, factors.exponents)
    print(f"== {title} ==")
    print(f"  plain MinMax scale {s0:.5f}: sse {plain:9.2f}")
    print(f"  calibrated base    {base:.5f}: sse {rescued:9.2f}"
          f"   (MinMax / base = {s0 / base:.0f})")
    print(f"  exponents {factors.exponents.tolist()}")
    print(f"  agreement {[round(a, 2) for a in factors.agreement.tolist()]}")
    return s0


def main():
    rng = Rng(2024)
    x = rng.child("bulk").standard_normal((N, C))
    x[:, 4] = wide_values(rng.child("wide"), N)

    s0 = describe("one consistently wide channel", x)
    print("  every sample of channel 4 nominated the same widening, the")
    print("  base scale dropped 8x, and the bulk got its resolution back.\n")

    flicker = rng.child("mask").uniform(0.0, 1.0, N) < 0.55
    x2 = x.copy()
    x2[flicker, 9] = wide_values(rng.child("flick"), int(flicker.sum()))
    describe("plus a channel that is wide in 55% of samples", x2)
    votes = per_sample_matrix(x2, s0 / 2**D, D, bits=BITS)
    hist = np.bincount(votes[:, 9], minlength=D + 1)
    print(f"  channel 9's nominations at the finest rung: {hist.tolist()}"
          f" for exponents 0..{D}")
    top = hist.max() / N
    print(f"  top share {top:.2f} is not strictly above kappa {KAPPA}, so no")
    print("  exponent is granted — and since an unrescued wide channel would")
    print("  clip at any finer base scale, the search retreats to plain")
    print("  MinMax. A flickering channel cannot be fixed by a static shift,")
    print("  and the calibrator refuses to pretend otherwise.\n")

    flicker = rng.child("mask2").uniform(0.0, 1.0, N) < 0.85
    x3 = x.copy()
    x3[flicker, 9] = wide_values(rng.child("flick2"), int(flicker.sum()))
    describe("plus a channel that is wide in 85% of samples", x3)
    print("  85% agreement clears the threshold: both channels are rescued")
    print("  and the bulk still gets the fine base scale.")

    # the same aggregation, seen tiny: 5 samples, one channel
    tiny = vote(np.array([[2], [2], [2], [0], [1]]), kappa=0.6)
    print(f"\nvote([2, 2, 2, 0, 1], kappa=0.6) -> exponent"
          f" {tiny.exponents[0]} at agreement {tiny.agreement[0]:.1f}")
    tiny = vote(np.array([[2], [2], [2], [0], [1]]), kappa=0.2)
    print(f"vote([2, 2, 2, 0, 1], kappa=0.2) -> exponent"
          f" {tiny.exponents[0]} at agreement {tiny.agreement[0]:.1f}")


if __name__ == "__main__":
    main()
