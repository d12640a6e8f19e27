"""End-to-end quantization runs: config, calibration, export, evaluation.

A run is driven entirely by a flat key-value config file plus a seed, and is
deterministic given both: two runs with the same config and seed write
byte-identical model files and byte-identical reports.

Config file format: one `key = value` per line, `#` starts a comment, keys
are exactly the Config field names below, unknown keys are fatal. Every
field has a default; `checkpoint` is the one field with no useful default,
so in practice a config file names at least that.

Quantization is layer-sequential in checkpoint order, each layer calibrated
against full-precision inputs by default. With propagate_quantized_inputs
on, calibration activations are re-captured before each layer with all
previously quantized layers running quantized, so later layers see the
inputs they will actually receive at inference time.

Quantized execution inside evaluation uses the real-arithmetic reference
path; the bit-shift integer path produces bit-identical outputs (that
equivalence is part of the test suite), so reports do not depend on which
path runs.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .les import (
    LayerCalibRecord,
    fuse,
    optimize_layer,
    smoothquant_tau,
)
from .modelfile import QuantizedModel, export_model, import_model
from .pts import calibrate_activation_scaling
from .quant import (
    QuantParams,
    QuantizedLayer,
    minmax_scale,
    quantize,
    quantized_matmul_reference,
)
from .tensor import Rng, matmul
from .timestep_weighting import TimestepWeighter
from .toydiff import collect_calibration, ddim_timesteps, load_checkpoint, sample

_PTS_CHOICES = ("skip_only", "all", "none")
_BASELINE_CHOICES = ("none", "smoothquant")
_OPTIMIZER_CHOICES = ("gd", "adam")


@dataclass(frozen=True)
class Config:
    """One quantization run, fully specified.

    Field notes:
        bits_w, bits_a: 2..16 are the supported storage widths; 32 is the
            documented lossless sanity mode (quantization becomes a no-op to
            float64 precision).
        T: sampler steps, which is also the calibration timestep subset.
        n: trajectories collected for calibration (and used for evaluation).
        B: optimization batch size. iterations: optimization steps per layer.
        alpha: timestep weight damping exponent (0 disables weighting).
        kappa: vote agreement threshold. xi: loss running-average momentum.
        D: largest power-of-two rescue exponent (0 disables rescue).
        pts_layers: which layers get rescue: skip_only (tagged layers), all,
            or none. les: learn channel scaling factors or leave tau = 1.
        baseline: "smoothquant" swaps learned factors for the closed-form
            magnitude-migration rule (tau from activation/weight maxima).
        eta: sampler stochasticity for calibration and evaluation runs.
        optimizer / lr / scale_refresh: scaling-factor training knobs.
        propagate_quantized_inputs: see the module docstring.
        act_unsigned: quantize activations to an unsigned range.
    """

    checkpoint: str = ""
    bits_w: int = 4
    bits_a: int = 8
    T: int = 20
    n: int = 16
    B: int = 32
    iterations: int = 200
    alpha: float = 1.0
    kappa: float = 0.6
    xi: float = 0.95
    lr: float = 1e-2
    D: int = 3
    pts_layers: str = "skip_only"
    les: bool = True
    baseline: str = "none"
    seed: int = 0
    eta: float = 0.0
    optimizer: str = "gd"
    scale_refresh: int = 10
    propagate_quantized_inputs: bool = False
    act_unsigned: bool = False

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(2 <= self.bits_w <= 32, f"bits_w out of range: {self.bits_w}")
        need(2 <= self.bits_a <= 32, f"bits_a out of range: {self.bits_a}")
        need(self.T >= 1, "T must be >= 1")
        need(self.n >= 1, "n must be >= 1")
        need(self.B >= 1, "B must be >= 1")
        need(self.iterations >= 1, "iterations must be >= 1")
        need(self.alpha >= 0.0, "alpha must be >= 0")
        need(0.0 < self.kappa <= 1.0, "kappa must lie in (0, 1]")
        need(0.0 <= self.xi < 1.0, "xi must lie in [0, 1)")
        need(self.lr > 0.0, "lr must be positive")
        need(0 <= self.D <= 16, "D must lie in [0, 16]")
        need(self.pts_layers in _PTS_CHOICES, f"pts_layers must be one of {_PTS_CHOICES}")
        need(self.baseline in _BASELINE_CHOICES, f"baseline must be one of {_BASELINE_CHOICES}")
        need(self.optimizer in _OPTIMIZER_CHOICES, f"optimizer must be one of {_OPTIMIZER_CHOICES}")
        need(0.0 <= self.eta <= 1.0, "eta must lie in [0, 1]")
        need(self.scale_refresh >= 1, "scale_refresh must be >= 1")

    def echo(self) -> tuple:
        """Canonical (key, value) text pairs, sorted, for reports."""
        pairs = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            pairs.append((f.name, text))
        return tuple(pairs)


_BOOL_WORDS = {
    "true": True, "on": True, "yes": True, "1": True,
    "false": False, "off": False, "no": False, "0": False,
}


def _convert(name: str, kind, text: str):
    if kind is bool:
        if text.lower() not in _BOOL_WORDS:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}")
        return _BOOL_WORDS[text.lower()]
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {text!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> Config:
    """Parse the flat key-value format. Unknown keys are fatal."""
    fields = {f.name: f.type for f in dataclasses.fields(Config)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    values = {}
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in fields:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        kind = kinds[str(fields[key])] if str(fields[key]) in kinds else fields[key]
        values[key] = _convert(key, kind, val)
    return Config(**values)


def parse_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSummary:
    name: str
    tau_min: float
    tau_max: float
    rescued: int
    delta_max: int
    agreement_min: float | None
    initial_loss: float | None
    final_loss: float | None


@dataclass(frozen=True)
class EvalReport:
    """Structured result of a quantize or eval run.

    rows holds (layer, timestep, mean squared layer output error); there is
    exactly one row per quantized layer per sampler timestep. endpoint_mse
    compares quantized and full-precision trajectory endpoints started from
    shared noise.
    """

    config_echo: tuple
    phase: str
    rows: tuple
    endpoint_mse: float
    layer_summaries: tuple

    def to_text(self) -> str:
        out = [f"# quantization report ({self.phase})", "", "[config]"]
        out += [f"{k} = {v}" for k, v in self.config_echo]
        out += ["", "[layers]"]
        for s in self.layer_summaries:
            bits = [
                f"{s.name}: tau in [{s.tau_min:.6g}, {s.tau_max:.6g}]",
                f"rescued {s.rescued}",
            ]
            if s.rescued:
                bits.append(f"max exponent {s.delta_max}")
            if s.agreement_min is not None:
                bits.append(f"min agreement {s.agreement_min:.4f}")
            if s.initial_loss is not None:
                bits.append(
                    f"loss {s.initial_loss:.6e} -> {s.final_loss:.6e}"
                )
            out.append("  " + ", ".join(bits))
        out += ["", "[error by layer and timestep]"]
        out.append("layer\ttimestep\tmse")
        for name, t, mse in self.rows:
            out.append(f"{name}\t{t}\t{mse!r}")
        out += ["", f"endpoint_mse = {self.endpoint_mse!r}", ""]
        return "\n".join(out)

    def write(self, path) -> None:
        """Write the text report plus machine-readable TSV tables.

        path gets the text; two sibling files get the tables:
        <stem>_layers.tsv (layer, timestep, mse) and <stem>_summary.tsv.
        """
        path = str(path)
        stem = path.rsplit(".", 1)[0] if "." in path.rsplit("/", 1)[-1] else path
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(stem + "_layers.tsv", "w", encoding="utf-8") as fh:
            fh.write("layer\ttimestep\tmse\n")
            for name, t, mse in self.rows:
                fh.write(f"{name}\t{t}\t{mse!r}\n")
        with open(stem + "_summary.tsv", "w", encoding="utf-8") as fh:
            fh.write(
                "layer\ttau_min\ttau_max\trescued\tdelta_max"
                "\tagreement_min\tinitial_loss\tfinal_loss\n"
            )
            for s in self.layer_summaries:
                fh.write(
                    "\t".join(
                        [
                            s.name,
                            repr(s.tau_min),
                            repr(s.tau_max),
                            str(s.rescued),
                            str(s.delta_max),
                            "-" if s.agreement_min is None else repr(s.agreement_min),
                            "-" if s.initial_loss is None else repr(s.initial_loss),
                            "-" if s.final_loss is None else repr(s.final_loss),
                        ]
                    )
                    + "\n"
                )


# ---------------------------------------------------------------------------
# Quantize
# ---------------------------------------------------------------------------


def _layer_runner(qlayer: QuantizedLayer):
    return lambda a: quantized_matmul_reference(a, qlayer)


def _check_finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} contains non-finite values")


def _calib_error_rows(record: LayerCalibRecord, qlayer: QuantizedLayer, tset):
    rows = []
    for t in tset:
        mask = record.timesteps == t
        x = record.activations[mask]
        ref = matmul(x, record.weight)
        got = quantized_matmul_reference(x, qlayer)
        rows.append((qlayer.name, int(t), float(np.mean((ref - got) ** 2))))
    return rows


def run_quantize(config: Config) -> tuple[QuantizedModel, EvalReport]:
    """Quantize the configured checkpoint; returns the model and its report.

    Stages: capture calibration activations along sampler trajectories;
    per layer, learn (or look up) channel scaling factors, pick the
    activation scale and any power-of-two rescue exponents on the scaled
    activations, fuse factors into divisors and weights, and quantize the
    weights; finally measure calibration-set error per layer per timestep
    and the endpoint deviation of a fresh paired trajectory run.
    """
    if not config.checkpoint:
        raise ConfigError("config names no checkpoint")
    model, schedule = load_checkpoint(config.checkpoint)
    root = Rng(config.seed)
    grid = ddim_timesteps(schedule.t_max, config.T)
    tset_desc = [int(t) for t in grid[1:][::-1]]  # sampler visit order
    act_signed = not config.act_unsigned

    def capture(tag: str, overrides):
        recs = collect_calibration(
            model, schedule, config.T, config.n, root.child(tag),
            eta=config.eta, overrides=overrides or None,
        )
        for r in recs.values():
            _check_finite(r.activations, f"calibration activations for {r.name}")
        return recs

    records = capture("calib", None)
    overrides = {}
    qlayers = []
    summaries = []
    rows = []
    for idx, spec in enumerate(model.quantizable_layers()):
        if config.propagate_quantized_inputs and overrides:
            records = capture(f"calib-{idx}", overrides)
        record = records[spec.name]
        c_in = record.activations.shape[1]
        initial_loss = final_loss = None
        if config.baseline == "smoothquant":
            tau = smoothquant_tau(record.activations, record.weight)
        elif config.les:
            weighter = TimestepWeighter(tset_desc, alpha=config.alpha, xi=config.xi)
            result = optimize_layer(
                record,
                weighter,
                root.child(f"les-{spec.name}"),
                bits_a=config.bits_a,
                bits_w=config.bits_w,
                iterations=config.iterations,
                lr=config.lr,
                batch_size=config.B,
                optimizer=config.optimizer,
                scale_refresh=config.scale_refresh,
                act_signed=act_signed,
            )
            tau = result.tau
            initial_loss, final_loss = result.initial_loss, result.final_loss
        else:
            tau = np.ones(c_in)
        x_hat = record.activations / tau[None, :]
        rescue = config.pts_layers == "all" or (
            config.pts_layers == "skip_only" and "skip_connection" in spec.tags
        )
        if rescue and config.D > 0:
            base_scale, factors = calibrate_activation_scaling(
                x_hat,
                bits=config.bits_a,
                signed=act_signed,
                max_exponent=config.D,
                kappa=config.kappa,
            )
            delta = factors.exponents
            agreement_min = float(factors.agreement.min())
        else:
            base_scale = minmax_scale(x_hat, config.bits_a, signed=act_signed).scale
            delta = np.zeros(c_in, dtype=np.int64)
            agreement_min = None
        act_params = QuantParams(base_scale, config.bits_a, act_signed)
        fused, w_scaled = fuse(tau, act_params, record.weight)
        w_params = minmax_scale(w_scaled, config.bits_w, signed=True, axis=1)
        qlayer = QuantizedLayer(
            spec.name, quantize(w_scaled, w_params), w_params, act_params, fused, delta
        )
        qlayers.append(qlayer)
        overrides[spec.name] = _layer_runner(qlayer)
        rows.extend(_calib_error_rows(record, qlayer, tset_desc))
        summaries.append(
            LayerSummary(
                spec.name,
                float(tau.min()),
                float(tau.max()),
                int(np.count_nonzero(delta)),
                int(delta.max()) if delta.size else 0,
                agreement_min,
                initial_loss,
                final_loss,
            )
        )
    qmodel = QuantizedModel(config.bits_w, config.bits_a, act_signed, tuple(qlayers))
    endpoint = _paired_endpoint_mse(model, schedule, config, overrides, root)
    report = EvalReport(config.echo(), "quantize", tuple(rows), endpoint, tuple(summaries))
    return qmodel, report


def _paired_endpoint_mse(model, schedule, config: Config, overrides, root: Rng) -> float:
    """Endpoint MSE between quantized and full-precision trajectories that
    share initial noise (and, when eta > 0, the injected noise sequence)."""
    init = root.child("eval-init").standard_normal((config.n, model.dim))
    traj_fp = sample(
        model, schedule, config.T, config.n, root.child("eval-noise"),
        eta=config.eta, x_init=init,
    )
    traj_q = sample(
        model, schedule, config.T, config.n, root.child("eval-noise"),
        eta=config.eta, overrides=overrides, x_init=init,
    )
    _check_finite(traj_q.endpoint, "quantized trajectory endpoint")
    return float(np.mean((traj_q.endpoint - traj_fp.endpoint) ** 2))


# ---------------------------------------------------------------------------
# Evaluate
# ---------------------------------------------------------------------------


def run_eval(model_path, config: Config) -> EvalReport:
    """Evaluate an exported model file against its full-precision source.

    Runs paired trajectories from shared noise, reports the endpoint MSE and
    the per-layer per-timestep mean squared output error measured on the
    quantized trajectory's own layer inputs.
    """
    if not config.checkpoint:
        raise ConfigError("config names no checkpoint")
    qmodel = import_model(model_path)
    model, schedule = load_checkpoint(config.checkpoint)
    specs = {s.name: s for s in model.quantizable_layers()}
    missing = [l.name for l in qmodel.layers if l.name not in specs]
    if missing:
        raise DomainError(f"model file has layers the checkpoint lacks: {missing}")
    absent = [n for n in specs if n not in {l.name for l in qmodel.layers}]
    if absent:
        raise DomainError(f"model file misses quantizable layers: {absent}")
    root = Rng(config.seed)
    overrides = {l.name: _layer_runner(l) for l in qmodel.layers}
    init = root.child("eval-init").standard_normal((config.n, model.dim))
    traj_fp = sample(
        model, schedule, config.T, config.n, root.child("eval-noise"),
        eta=config.eta, x_init=init,
    )
    cap = {l.name: [] for l in qmodel.layers}
    traj_q = sample(
        model, schedule, config.T, config.n, root.child("eval-noise"),
        eta=config.eta, overrides=overrides, capture=cap, x_init=init,
    )
    _check_finite(traj_q.endpoint, "quantized trajectory endpoint")
    endpoint = float(np.mean((traj_q.endpoint - traj_fp.endpoint) ** 2))
    rows = []
    for l in qmodel.layers:
        w = model.layer_weight(l.name)
        for a, t in cap[l.name]:
            ref = matmul(a, w)
            got = quantized_matmul_reference(a, l)
            rows.append((l.name, int(t), float(np.mean((ref - got) ** 2))))
    summaries = tuple(
        LayerSummary(
            l.name,
            float((l.fused_tau / l.act_params.scale).min()),
            float((l.fused_tau / l.act_params.scale).max()),
            int(np.count_nonzero(l.pts_exponents)),
            int(l.pts_exponents.max()) if l.pts_exponents.size else 0,
            None,
            None,
            None,
        )
        for l in qmodel.layers
    )
    return EvalReport(config.echo(), "eval", tuple(rows), endpoint, summaries)


def quantize_to_file(config: Config, out_path, report_path=None) -> EvalReport:
    """run_quantize plus export; writes the report when a path is given."""
    qmodel, report = run_quantize(config)
    export_model(out_path, qmodel)
    if report_path is not None:
        report.write(report_path)
    return report
