#!/usr/bin/env python3
"""Train the bundled toy denoiser checkpoint from scratch.

Deterministic given the seed: rebuilding produces a byte-identical
checkpoints/toy2d.ckpt. Takes under a minute on one CPU core.

Usage: python3 scripts/make_checkpoint.py [--out checkpoints/toy2d.ckpt]
"""

import argparse
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from denoq.tensor import Rng  # noqa: E402
from denoq.toydiff import (  # noqa: E402
    fit_toy_denoiser,
    ring_data,
    sample,
    save_checkpoint,
)

SEED = 1337


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="checkpoints/toy2d.ckpt")
    args = parser.parse_args()

    rng = Rng(SEED)
    model, schedule = fit_toy_denoiser(rng.child("train"))
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, schedule)
    print(f"wrote {out} ({model.parameter_count()} parameters, t_max={schedule.t_max})")

    # quick quality readout: sampled endpoints should land near the ring
    traj = sample(model, schedule, 20, 512, rng.child("check"))
    pts = traj.endpoint
    radii = np.hypot(pts[:, 0], pts[:, 1])
    target = ring_data(rng.child("ref"), 512)
    t_rad = np.hypot(target[:, 0], target[:, 1])
    print(
        f"sampled radius mean {radii.mean():.3f} (data {t_rad.mean():.3f}), "
        f"std {radii.std():.3f} (data {t_rad.std():.3f})"
    )
    gain = model.params["gain"]
    print(f"skip gains at channels {np.flatnonzero(gain != 1.0)}: "
          f"{gain[gain != 1.0]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
