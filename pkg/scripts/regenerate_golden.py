#!/usr/bin/env python3
"""Regenerate the golden ordering report: python3 scripts/regenerate_golden.py

Runs three quantization variants of configs/w4a8.cfg on the bundled
checkpoint — the plain MinMax baseline, learned scaling alone, and learned
scaling plus power-of-two rescue — and records their endpoint trajectory
MSEs in golden/ordering.txt. Deterministic: rebuilding writes the same
bytes. The acceptance suite re-measures the same three numbers and checks
them against this file.
"""

import dataclasses
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from denoq.pipeline import parse_config, run_quantize  # noqa: E402

VARIANTS = (
    ("minmax", dict(les=False, pts_layers="none")),
    ("les_only", dict(les=True, pts_layers="none")),
    ("les_pts", dict(les=True, pts_layers="skip_only")),
)


def golden_lines(config_path) -> list[str]:
    base = parse_config(config_path)
    lines = [
        "# endpoint trajectory MSE, quantized vs full precision, shared noise",
        f"# config: {pathlib.Path(config_path).name}, seed = {base.seed}",
    ]
    results = {}
    for name, override in VARIANTS:
        cfg = dataclasses.replace(base, **override)
        _, report = run_quantize(cfg)
        results[name] = report.endpoint_mse
        skip = next(s for s in report.layer_summaries if s.name == "skip")
        lines.append(
            f"{name}: endpoint_mse = {report.endpoint_mse!r} "
            f"(skip: rescued={skip.rescued}, "
            f"tau_range=[{skip.tau_min:.4f}, {skip.tau_max:.4f}])"
        )
    lines.append(
        "ordering: les_pts < minmax is "
        + str(results["les_pts"] < results["minmax"]).lower()
    )
    lines.append(
        "ordering: les_pts <= les_only is "
        + str(results["les_pts"] <= results["les_only"]).lower()
    )
    return lines


def main() -> int:
    out = ROOT / "golden" / "ordering.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = golden_lines(ROOT / "configs" / "w4a8.cfg")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"\nwrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
