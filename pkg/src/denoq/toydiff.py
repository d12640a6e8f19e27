"""A tiny 2-d denoising diffusion testbed with a deliberately ugly layer.

The quantization machinery in this package needs a subject that is cheap
enough to sample hundreds of times in a test run yet still shows the failure
mode it was built for: activation channels whose magnitudes dwarf the rest
of the tensor. This module provides that subject:

* a cosine-free linear noise schedule with alpha_bar(0) = 1,
* a small MLP noise predictor over 2-d points with a learned timestep
  embedding table, one residual block, and a skip branch whose input is
  intentionally un-normalized: a per-channel feature gain blows a few
  channels up by large recorded factors (the consumer's weight rows are
  divided by the same factors, so the function is unchanged but the
  activation statistics are pathological),
* a deterministic DDIM-style sampler plus calibration capture,
* a fitting routine and a documented binary checkpoint format so a trained
  model can be committed and reloaded byte for byte.

Checkpoint format (all integers little-endian):

    offset 0   magic, 4 bytes: "TDN1"
    offset 4   version, u16 (currently 1)
    offset 6   tensor count, u32
    offset 10  table, one entry per tensor:
                   name length, u16
                   name, utf-8 bytes
                   ndim, u8
                   dims, u32 each
                   data offset, u64 (absolute, points into the data region)
    data       float32 values, row-major, at the recorded offsets

Weights live in the file as float32; everything is widened to float64 on
load and math runs in float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .les import LayerCalibRecord
from .tensor import Rng, as_real

CHECKPOINT_MAGIC = b"TDN1"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Noise schedule and forward process
# ---------------------------------------------------------------------------


class NoiseSchedule:
    """Variance schedule beta_1..beta_T and the cumulative alpha_bar curve.

    alpha_bar(0) is pinned to exactly 1 so that integer timestep 0 means
    "clean data". alpha_bar is strictly decreasing because every factor
    (1 - beta_t) lies strictly inside (0, 1).
    """

    def __init__(self, betas):
        betas = as_real(betas, "betas").reshape(-1)
        if betas.size < 1:
            raise DomainError("a schedule needs at least one step")
        if np.any((betas <= 0.0) | (betas >= 1.0)):
            raise DomainError("all betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.alphas_cumprod = np.concatenate([[1.0], np.cumprod(1.0 - betas)])

    @classmethod
    def linear(cls, t_max: int, beta_start: float = 1e-4, beta_end: float = 0.02):
        if t_max < 1:
            raise DomainError("t_max must be >= 1")
        return cls(np.linspace(beta_start, beta_end, t_max))

    @property
    def t_max(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: int) -> float:
        if not (0 <= t <= self.t_max):
            raise DomainError(f"timestep {t} outside [0, {self.t_max}]")
        return float(self.alphas_cumprod[t])


def forward_noise(schedule: NoiseSchedule, x0, t: int, rng: Rng) -> np.ndarray:
    """Diffuse clean data to timestep t:

        x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise

    with noise drawn fresh from rng. t = 0 returns x0 unchanged.
    """
    x0 = as_real(x0, "x0")
    ab = schedule.alpha_bar(t)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# The denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """Metadata for one matmul site the pipeline may quantize."""

    name: str
    c_in: int
    c_out: int
    tags: tuple = ()


_PARAM_SHAPES = (
    "betas",
    "embed",
    "stem_w",
    "stem_b",
    "gain",
    "res1_w",
    "res2_w",
    "skip_w",
    "mid_w",
    "head_w",
    "head_b",
)


def _silu(v):
    # sigmoid is computed from exp(-|v|) so neither branch can overflow
    ev = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1.0 / (1.0 + ev), ev / (1.0 + ev))
    return v * sig


def _silu_prime(v):
    ev = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1.0 / (1.0 + ev), ev / (1.0 + ev))
    return sig * (1.0 + v * (1.0 - sig))


class ToyDenoiser:
    """Noise predictor eps(x_t, t) over 2-d points.

    Architecture (H hidden units, E embedding width):

        h0 = concat(x, embed[t])                    stem input
        h1 = silu(h0 @ stem_w + stem_b)             full precision stem
        r  = silu(h1 @ res1_w)                      quantizable "res1"
        r  = r @ res2_w                             quantizable "res2"
        sk = (h1 * gain) @ skip_w                   quantizable "skip",
                                                    tagged skip_connection
        h4 = silu(r + sk)
        m  = silu(h4 @ mid_w)                       quantizable "mid"
        out = m @ head_w + head_b                   full precision head

    The quantizable sites carry no biases. gain is the recorded vector of
    manufactured per-channel factors on the skip branch input; it is all
    ones straight out of training.
    """

    dim = 2

    def __init__(self, params: dict):
        missing = [k for k in _PARAM_SHAPES if k != "betas" and k not in params]
        if missing:
            raise DomainError(f"model parameters missing: {missing}")
        p = {k: as_real(v, k) for k, v in params.items() if k != "betas"}
        hidden = p["stem_w"].shape[1]
        embed_dim = p["embed"].shape[1]
        if p["stem_w"].shape[0] != self.dim + embed_dim:
            raise DimensionError("stem width does not match x + embedding")
        for name in ("res1_w", "res2_w", "skip_w", "mid_w"):
            if p[name].shape != (hidden, hidden):
                raise DimensionError(f"{name} must be [{hidden} x {hidden}]")
        if p["gain"].shape != (hidden,):
            raise DimensionError("gain must have one entry per hidden unit")
        if np.any(p["gain"] <= 0):
            raise DomainError("gain factors must be strictly positive")
        if p["head_w"].shape != (hidden, self.dim):
            raise DimensionError(f"head_w must be [{hidden} x {self.dim}]")
        self.params = p
        self.hidden = hidden
        self.embed_dim = embed_dim

    @property
    def t_table_max(self) -> int:
        return self.params["embed"].shape[0] - 1

    def quantizable_layers(self) -> tuple[LayerSpec, ...]:
        h = self.hidden
        return (
            LayerSpec("res1", h, h),
            LayerSpec("res2", h, h),
            LayerSpec("skip", h, h, tags=("skip_connection",)),
            LayerSpec("mid", h, h),
        )

    def layer_weight(self, name: str) -> np.ndarray:
        key = f"{name}_w"
        if key not in self.params or name not in {s.name for s in self.quantizable_layers()}:
            raise DomainError(f"unknown quantizable layer {name!r}")
        return self.params[key]

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x, t: int, overrides=None, capture=None) -> np.ndarray:
        """Predict the noise in x at timestep t.

        overrides maps a quantizable layer name to a callable replacing its
        matmul (input activation in, product out). capture maps layer names
        to lists that receive (input activation, t) pairs.
        """
        x = as_real(x, "x")
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"x must be [B x {self.dim}]")
        t = int(t)
        if not (0 <= t <= self.t_table_max):
            raise DomainError(f"timestep {t} outside the embedding table")
        overrides = overrides or {}

        def run(name, a):
            if capture is not None and name in capture:
                capture[name].append((a.copy(), t))
            fn = overrides.get(name)
            return fn(a) if fn is not None else a @ self.params[f"{name}_w"]

        p = self.params
        emb = np.broadcast_to(p["embed"][t], (x.shape[0], self.embed_dim))
        h0 = np.concatenate([x, emb], axis=1)
        h1 = _silu(h0 @ p["stem_w"] + p["stem_b"])
        r = _silu(run("res1", h1))
        r = run("res2", r)
        sk = run("skip", h1 * p["gain"])
        h4 = _silu(r + sk)
        m = _silu(run("mid", h4))
        return m @ p["head_w"] + p["head_b"]


# ---------------------------------------------------------------------------
# DDIM-style sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One sampling run: states[0] is the initial noise, states[-1] the
    endpoint; timesteps[i] is where the model was evaluated to move
    states[i] -> states[i+1]."""

    states: np.ndarray
    timesteps: np.ndarray
    eta: float

    def __post_init__(self):
        if self.states.shape[0] != self.timesteps.shape[0] + 1:
            raise DimensionError("a trajectory has one more state than timesteps")

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def ddim_timesteps(t_max: int, steps: int) -> np.ndarray:
    """Ascending step grid 0 = g_0 < g_1 < ... < g_steps = t_max."""
    if not (1 <= steps <= t_max):
        raise DomainError(f"steps must lie in [1, {t_max}]")
    grid = np.unique(np.rint(np.linspace(0.0, t_max, steps + 1)).astype(np.int64))
    return grid


def ddim_step(
    x_t,
    eps_hat,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    noise=None,
) -> np.ndarray:
    """One deterministic (eta = 0) or partially stochastic update t -> t_prev.

    Reconstructs the clean-data estimate from the predicted noise, then
    re-noises it to the target step:

        x0_est = (x_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)
        x_prev = sqrt(ab_prev) * x0_est
                 + sqrt(1 - ab_prev - sigma^2) * eps_hat + sigma * noise

    with sigma = eta * sqrt((1-ab_prev)/(1-ab_t)) * sqrt(1 - ab_t/ab_prev).
    At t_prev = 0 both noise terms vanish and the update returns x0_est.
    """
    x_t = as_real(x_t, "x_t")
    eps_hat = as_real(eps_hat, "eps_hat")
    if x_t.shape != eps_hat.shape:
        raise DimensionError("x_t and eps_hat must have the same shape")
    if not (schedule.t_max >= t > t_prev >= 0):
        raise DomainError(f"need t_max >= t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if not (0.0 <= eta <= 1.0):
        raise DomainError("eta must lie in [0, 1]")
    ab_t = schedule.alpha_bar(t)
    ab_p = schedule.alpha_bar(t_prev)
    x0_est = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    dir_sq = 1.0 - ab_p - sigma * sigma
    x_prev = np.sqrt(ab_p) * x0_est + np.sqrt(max(dir_sq, 0.0)) * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise DomainError("eta > 0 requires a noise draw")
        x_prev = x_prev + sigma * as_real(noise, "noise")
    return x_prev


def sample(
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    steps,
    batch: int,
    rng: Rng,
    *,
    eta: float = 0.0,
    overrides=None,
    capture=None,
    x_init=None,
) -> Trajectory:
    """Run the sampler from pure noise down to data.

    steps is either a step count (a uniform grid is built) or an explicit
    ascending grid starting at 0. The same rng drives the initial noise and
    any eta > 0 injections, so a seed pins the whole trajectory.
    """
    if isinstance(steps, (int, np.integer)):
        grid = ddim_timesteps(schedule.t_max, int(steps))
    else:
        grid = np.asarray(steps, dtype=np.int64)
        if grid.ndim != 1 or grid[0] != 0 or grid[-1] != schedule.t_max:
            raise DomainError("an explicit grid must ascend from 0 to t_max")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("an explicit grid must be strictly ascending")
    if x_init is None:
        x = rng.standard_normal((batch, model.dim))
    else:
        x = as_real(x_init, "x_init")
    states = [x]
    evaluated = []
    for i in range(len(grid) - 1, 0, -1):
        t, t_prev = int(grid[i]), int(grid[i - 1])
        eps_hat = model.forward(x, t, overrides=overrides, capture=capture)
        noise = rng.standard_normal(x.shape) if eta > 0.0 else None
        x = ddim_step(x, eps_hat, t, t_prev, schedule, eta=eta, noise=noise)
        states.append(x)
        evaluated.append(t)
    return Trajectory(np.array(states), np.array(evaluated, dtype=np.int64), float(eta))


def collect_calibration(
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    steps: int,
    n: int,
    rng: Rng,
    *,
    eta: float = 0.0,
    overrides=None,
) -> dict[str, LayerCalibRecord]:
    """Capture every quantizable layer's input across n sampling runs.

    Returns one record per layer with n * steps rows, each tagged with the
    timestep it was captured at. overrides is for the propagated-inputs
    mode, where layers already quantized run quantized during capture; leave
    it unset for plain full-precision calibration.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    capture = {spec.name: [] for spec in model.quantizable_layers()}
    sample(
        model, schedule, steps, n, rng, eta=eta, overrides=overrides, capture=capture
    )
    records = {}
    for spec in model.quantizable_layers():
        pairs = capture[spec.name]
        acts = np.concatenate([a for a, _ in pairs], axis=0)
        ts = np.concatenate(
            [np.full(a.shape[0], t, dtype=np.int64) for a, t in pairs]
        )
        records[spec.name] = LayerCalibRecord(
            spec.name, acts, ts, model.layer_weight(spec.name)
        )
    return records


def perturbation_sensitivity(
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    steps: int,
    n: int,
    rng: Rng,
    *,
    magnitude: float = 0.05,
) -> dict[str, float]:
    """Endpoint damage from a one-step nudge early vs late in the trajectory.

    Runs a clean trajectory, then two more from the same initial noise with
    magnitude-scaled noise added to the model output at the first step
    (earliest, largest t) and at the last step respectively. Returns the
    endpoint mean squared deviations {"early": ..., "late": ...}. Measured
    and reported only; which side is larger is an empirical question the
    caller may inspect, not an invariant.
    """
    grid = ddim_timesteps(schedule.t_max, steps)
    x_init = rng.child("perturb-init").standard_normal((n, model.dim))
    bumps = {
        name: rng.child(f"perturb-{name}").standard_normal((n, model.dim)) * magnitude
        for name in ("early", "late")
    }

    def run(bump_at=None, bump=None):
        x = x_init
        idx = 0
        for i in range(len(grid) - 1, 0, -1):
            t, t_prev = int(grid[i]), int(grid[i - 1])
            eps_hat = model.forward(x, t)
            if bump_at is not None and idx == bump_at:
                eps_hat = eps_hat + bump
            x = ddim_step(x, eps_hat, t, t_prev, schedule)
            idx += 1
        return x

    clean = run()
    early = run(0, bumps["early"])
    late = run(len(grid) - 2, bumps["late"])
    return {
        "early": float(np.mean((early - clean) ** 2)),
        "late": float(np.mean((late - clean) ** 2)),
    }


# ---------------------------------------------------------------------------
# Data, fitting, outlier manufacture
# ---------------------------------------------------------------------------


def ring_data(rng: Rng, n: int, modes: int = 8, radius: float = 1.4,
              spread: float = 0.1) -> np.ndarray:
    """Mixture of small Gaussians on a circle; per-dimension variance near 1."""
    which = rng.integers(0, modes, n)
    angles = 2.0 * np.pi * which / modes
    centers = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    return centers + spread * rng.standard_normal((n, 2))


def _sinusoidal_table(t_max: int, width: int) -> np.ndarray:
    t = np.arange(t_max + 1, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(width // 2) / max(width // 2 - 1, 1))
    ang = t * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, :width]


def fit_toy_denoiser(
    rng: Rng,
    *,
    t_max: int = 1000,
    hidden: int = 64,
    embed_dim: int = 16,
    train_steps: int = 6000,
    batch: int = 256,
    lr: float = 2e-3,
    outlier_channels: tuple | None = None,
    outlier_gains: tuple = (64.0, 32.0, 256.0),
) -> tuple[ToyDenoiser, NoiseSchedule]:
    """Train the denoiser on ring data, then manufacture skip outliers.

    Training minimizes ||eps_pred - eps||^2 with Adam, all in numpy. After
    training, selected skip-branch channels are scaled by the listed gains
    and skip_w's matching rows divided by them, so the network function is
    unchanged while the captured skip input develops the large inter-channel
    spread the scaling and rescue machinery exists to handle. The gains stay
    in the checkpoint as the "gain" tensor, so tests can assert the
    pathology is really there.

    outlier_channels=None (the default) picks channels from a probe batch so
    the two pathology shapes both occur. All but the last gain land on
    active channels whose magnitudes vary the most across samples — these
    split per-sample exponent votes and are the learned factors' natural
    targets. The last gain lands on the channel whose magnitude is most
    uniform across samples (typically one pinned near the silu negative
    plateau), which votes coherently and is the power-of-two rescue's
    natural target. Pass explicit indices to zip channels with gains
    directly.
    """
    if outlier_channels is not None and len(outlier_channels) != len(outlier_gains):
        raise DimensionError("one gain per outlier channel required")
    schedule = NoiseSchedule.linear(t_max)
    data_rng = rng.child("data")
    noise_rng = rng.child("noise")
    init = rng.child("init")

    def he(shape, fan_in):
        return init.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    in_dim = 2 + embed_dim
    params = {
        "embed": _sinusoidal_table(t_max, embed_dim),
        "stem_w": he((in_dim, hidden), in_dim),
        "stem_b": np.zeros(hidden),
        "gain": np.ones(hidden),
        "res1_w": he((hidden, hidden), hidden),
        "res2_w": he((hidden, hidden), hidden) * 0.5,
        "skip_w": he((hidden, hidden), hidden) * 0.5,
        "mid_w": he((hidden, hidden), hidden),
        "head_w": he((hidden, 2), hidden),
        "head_b": np.zeros(2),
    }
    trainable = [k for k in params if k != "gain"]
    m_state = {k: np.zeros_like(params[k]) for k in trainable}
    v_state = {k: np.zeros_like(params[k]) for k in trainable}
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    sqrt_ab = np.sqrt(schedule.alphas_cumprod)
    sqrt_1mab = np.sqrt(1.0 - schedule.alphas_cumprod)

    for step in range(1, train_steps + 1):
        x0 = ring_data(data_rng, batch)
        ts = noise_rng.integers(1, t_max + 1, batch)
        eps = noise_rng.standard_normal((batch, 2))
        x_t = sqrt_ab[ts, None] * x0 + sqrt_1mab[ts, None] * eps

        emb = params["embed"][ts]
        h0 = np.concatenate([x_t, emb], axis=1)
        a1 = h0 @ params["stem_w"] + params["stem_b"]
        h1 = _silu(a1)
        ar1 = h1 @ params["res1_w"]
        h2 = _silu(ar1)
        ar2 = h2 @ params["res2_w"]
        ask = h1 @ params["skip_w"]
        h3 = ar2 + ask
        h4 = _silu(h3)
        am = h4 @ params["mid_w"]
        h5 = _silu(am)
        out = h5 @ params["head_w"] + params["head_b"]

        g_out = 2.0 * (out - eps) / out.size
        grads = {
            "head_w": h5.T @ g_out,
            "head_b": g_out.sum(axis=0),
        }
        g_h5 = g_out @ params["head_w"].T
        g_am = g_h5 * _silu_prime(am)
        grads["mid_w"] = h4.T @ g_am
        g_h4 = g_am @ params["mid_w"].T
        g_h3 = g_h4 * _silu_prime(h3)
        grads["res2_w"] = h2.T @ g_h3
        g_h2 = g_h3 @ params["res2_w"].T
        g_ar1 = g_h2 * _silu_prime(ar1)
        grads["res1_w"] = h1.T @ g_ar1
        grads["skip_w"] = h1.T @ g_h3
        g_h1 = g_ar1 @ params["res1_w"].T + g_h3 @ params["skip_w"].T
        g_a1 = g_h1 * _silu_prime(a1)
        grads["stem_w"] = h0.T @ g_a1
        grads["stem_b"] = g_a1.sum(axis=0)
        g_h0 = g_a1 @ params["stem_w"].T
        g_embed = np.zeros_like(params["embed"])
        np.add.at(g_embed, ts, g_h0[:, 2:])
        grads["embed"] = g_embed

        for k in trainable:
            m_state[k] = b1 * m_state[k] + (1 - b1) * grads[k]
            v_state[k] = b2 * v_state[k] + (1 - b2) * grads[k] ** 2
            m_hat = m_state[k] / (1 - b1**step)
            v_hat = v_state[k] / (1 - b2**step)
            params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps_adam)

    if outlier_channels is None and outlier_gains:
        # Rank channels on the distribution quantization will actually see:
        # the skip input captured along sampling trajectories.
        probe_model = ToyDenoiser({k: v.copy() for k, v in params.items()})
        cap = {"skip": []}
        sample(probe_model, schedule, 20, 16, rng.child("probe"), capture=cap)
        mags = np.abs(np.concatenate([a for a, _ in cap["skip"]], axis=0))
        colmax = np.max(mags, axis=0)
        uniformity = np.where(
            colmax > 1e-3, np.median(mags, axis=0) / np.maximum(colmax, 1e-12), 0.0
        )
        pinned = int(np.argsort(-uniformity, kind="stable")[0])
        active = colmax >= np.median(colmax)
        spread_order = [
            int(c)
            for c in np.argsort(uniformity, kind="stable")
            if active[c] and c != pinned
        ]
        outlier_channels = tuple(spread_order[: len(outlier_gains) - 1]) + (pinned,)
    elif outlier_channels is None:
        outlier_channels = ()

    for c, f in zip(outlier_channels, outlier_gains):
        if not (0 <= c < hidden):
            raise DomainError(f"outlier channel {c} outside [0, {hidden})")
        if f <= 0:
            raise DomainError("outlier gains must be positive")
        params["gain"][c] *= f
        params["skip_w"][c, :] /= f

    return ToyDenoiser(params), schedule


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: ToyDenoiser, schedule: NoiseSchedule) -> None:
    """Write model + schedule in the binary format documented above."""
    tensors = dict(model.params)
    tensors["betas"] = schedule.betas
    names = sorted(tensors)
    table = bytearray()
    entries = []
    offset_fixup = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        entry = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        entry += b"".join(struct.pack("<I", d) for d in arr.shape)
        offset_fixup.append(len(table) + len(entry))
        entry += struct.pack("<Q", 0)  # patched once the layout is known
        table += entry
        entries.append(arr)
    header = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(names))
    data_start = len(header) + len(table)
    blob = bytearray()
    for fix, arr in zip(offset_fixup, entries):
        struct.pack_into("<Q", table, fix, data_start + len(blob))
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table)
        fh.write(blob)


def load_checkpoint(path) -> tuple[ToyDenoiser, NoiseSchedule]:
    """Read a checkpoint back; rejects bad magic, versions, and truncation."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    tensors = {}
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + name_len].decode("utf-8")
            if len(raw) < pos + name_len:
                raise struct.error
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
        except struct.error as exc:
            raise FormatError(
                f"{path}: truncated table entry {i} at offset {pos}"
            ) from exc
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = offset + 4 * size
        if end > len(raw):
            raise FormatError(
                f"{path}: tensor {name!r} data truncated "
                f"(needs bytes up to {end}, file has {len(raw)})"
            )
        arr = np.frombuffer(raw[offset:end], dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(dims)
    if "betas" not in tensors:
        raise FormatError(f"{path}: checkpoint carries no schedule")
    schedule = NoiseSchedule(tensors.pop("betas"))
    model = ToyDenoiser(tensors)
    if model.t_table_max != schedule.t_max:
        raise FormatError(
            f"{path}: embedding table covers {model.t_table_max} steps "
            f"but the schedule has {schedule.t_max}"
        )
    return model, schedule
