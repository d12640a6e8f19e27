#!/usr/bin/env python3
"""A tour of the bundled toy denoiser.

The checkpoint under checkpoints/ is a tiny noise predictor over 2-d points
drawn from a ring of Gaussians, trained with three manufactured outlier
channels on its skip branch. It exists so the quantization stages have a
real trajectory distribution to calibrate against while everything still
runs in milliseconds.
"""

import numpy as np

from denoq.tensor import Rng
from denoq.toydiff import (
    collect_calibration,
    forward_noise,
    load_checkpoint,
    perturbation_sensitivity,
    ring_data,
    sample,
)

CHECKPOINT = "checkpoints/toy2d.ckpt"


def main():
    model, schedule = load_checkpoint(CHECKPOINT)
    print(f"loaded {CHECKPOINT}: {model.parameter_count()} parameters, "
          f"{schedule.t_max} diffusion steps")
    print(f"quantizable layers: "
          f"{', '.join(s.name + (str(list(s.tags)) if s.tags else '') for s in model.quantizable_layers())}")

    rng = Rng(0)
    print("\nforward noising follows the closed-form variance:")
    x0 = ring_data(rng.child("data"), 4000)
    for t in (100, 1000):
        xt = forward_noise(schedule, x0, t, rng.child(f"fn{t}"))
        ab = schedule.alpha_bar(t)
        want = ab * np.var(x0, axis=0) + (1 - ab)
        print(f"  t={t:4d}: var {np.var(xt, axis=0).round(3).tolist()}"
              f" vs predicted {want.round(3).tolist()}")

    print("\nsampling 20 steps from pure noise:")
    traj = sample(model, schedule, 20, 512, rng.child("sample"))
    radii = np.hypot(traj.endpoint[:, 0], traj.endpoint[:, 1])
    data_radii = np.hypot(x0[:, 0], x0[:, 1])
    print(f"  endpoint radius mean {radii.mean():.3f} / std {radii.std():.3f}")
    print(f"  data     radius mean {data_radii.mean():.3f} / std {data_radii.std():.3f}")

    print("\nthe manufactured pathology, seen from calibration capture:")
    records = collect_calibration(model, schedule, 20, 16, rng.child("calib"))
    for name, rec in sorted(records.items()):
        colmax = np.max(np.abs(rec.activations), axis=0)
        print(f"  {name:5s}: {rec.activations.shape[0]} rows, "
              f"widest/median channel = {colmax.max() / np.median(colmax):7.1f}")
    print("  (the skip branch is the one that needs scaling and rescue)")

    sens = perturbation_sensitivity(model, schedule, 20, 64, rng.child("perturb"))
    print(f"\nendpoint damage from a one-step nudge: "
          f"early {sens['early']:.4f}, late {sens['late']:.4f}")
    print("errors injected at different timesteps do different damage, which")
    print("is why calibration weighs timesteps by their running loss.")


if __name__ == "__main__":
    main()
