"""Learned equivalent scaling of activation channels into weight rows.

A matmul is invariant under dividing activation column c by tau_c while
multiplying weight row c by the same factor. That degree of freedom is free
real estate for quantization: channels whose magnitudes dwarf the rest of
the tensor can be shrunk before the activation quantizer sees them, with the
surplus pushed into the weights where per-column scales absorb it more
gracefully. This module learns those per-channel factors by gradient
descent on the layer reconstruction error

    loss_i = || (X W)_i  -  Q(X / tau) Q(tau * W)_i ||^2

where Q is the plain MinMax quantizer, and then fuses the learned factors
into the activation quantization step so inference pays nothing extra:
dividing by tau and quantizing with scale s is the same integer code as
quantizing with the per-channel divisor tau_c * s.

Gradients use the straight-through convention: rounding passes gradients
unchanged, clamped elements pass nothing, and the quantizer scales are held
constant within a step (the optimizer refreshes them on a fixed cadence).
Factors are parameterized as log_tau, so tau stays positive and a zero
initialization means "no scaling".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .quant import QuantParams, minmax_scale
from .tensor import Rng, Tensor, as_real, channel_mul, matmul
from .timestep_weighting import TimestepWeighter

# Descent safeguards: gradients are norm-clipped and log factors bounded to
# tau in [1e-4, 1e4]. Outlier layers otherwise blow up the first few
# log-space steps badly enough to underflow tau to zero.
_MAX_GRAD_NORM = 10.0
_LOG_TAU_BOUND = float(np.log(1e4))


@dataclass
class LayerCalibRecord:
    """Captured inputs of one matmul site across the calibration run.

    activations: [B_total x C_in] rows in capture order.
    timesteps: the sampler timestep each row was captured at, length B_total.
    weight: the layer's full-precision weight, [C_in x C_out].
    """

    name: str
    activations: np.ndarray
    timesteps: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        self.activations = as_real(self.activations, f"{self.name} activations")
        self.weight = as_real(self.weight, f"{self.name} weight")
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64).reshape(-1)
        if self.activations.ndim != 2 or self.weight.ndim != 2:
            raise DimensionError("activations and weight must be 2-d")
        if self.activations.shape[0] != self.timesteps.shape[0]:
            raise DimensionError("one timestep per captured activation row required")
        if self.activations.shape[1] != self.weight.shape[0]:
            raise DimensionError(
                f"{self.name}: activations have C_in={self.activations.shape[1]} "
                f"but weight has {self.weight.shape[0]} rows"
            )


def _check_tau(tau, c_in: int) -> np.ndarray:
    tau = as_real(tau, "tau").reshape(-1)
    if tau.shape[0] != c_in:
        raise DimensionError(f"tau must have {c_in} entries, got {tau.shape[0]}")
    if np.any(tau <= 0.0):
        raise DomainError("tau must be strictly positive")
    return tau


def _scaled_pair(x: Tensor, w: Tensor, tau: np.ndarray) -> tuple[Tensor, Tensor]:
    return x / tau[None, :], w * tau[:, None]


def _fake_quant(v: Tensor, params: QuantParams, rounded: bool):
    """Fake-quantize v; returns (values, straight-through mask).

    The mask marks elements inside the representable range before rounding,
    which is where the straight-through estimator passes gradients.
    """
    s = params.scale_for(v.shape)
    l, u = params.bounds
    ratio = v / s
    mask = (ratio >= l) & (ratio <= u)
    if rounded:
        ratio = np.rint(ratio)
    return s * np.clip(ratio, l, u), mask


def _default_params(
    x_hat: Tensor, w_hat: Tensor, bits_a: int, bits_w: int, act_signed: bool
) -> tuple[QuantParams, QuantParams]:
    act = minmax_scale(x_hat, bits_a, signed=act_signed)
    wgt = minmax_scale(w_hat, bits_w, signed=True, axis=1)
    return act, wgt


def les_loss(
    x: Tensor,
    w: Tensor,
    tau,
    bits_a: int = 8,
    bits_w: int = 4,
    act_params: QuantParams | None = None,
    weight_params: QuantParams | None = None,
    *,
    rounded: bool = True,
    act_signed: bool = True,
) -> np.ndarray:
    """Per-sample reconstruction losses of the scaled, quantized layer.

    When act_params / weight_params are omitted they are recomputed by
    MinMax on the scaled tensors for this evaluation; passing them freezes
    the quantization grid, which is how the optimizer evaluates within a
    step. rounded=False replaces round with the identity (quantization
    becomes pure range clipping), the differentiable surrogate that the
    straight-through gradient is exact for.
    """
    x = as_real(x, "activations")
    w = as_real(w, "weight")
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"incompatible layer shapes {x.shape} and {w.shape}")
    tau = _check_tau(tau, x.shape[1])
    ref = matmul(x, w)
    x_hat, w_hat = _scaled_pair(x, w, tau)
    if act_params is None or weight_params is None:
        act_params, weight_params = _default_params(
            x_hat, w_hat, bits_a, bits_w, act_signed
        )
    qx, _ = _fake_quant(x_hat, act_params, rounded)
    qw, _ = _fake_quant(w_hat, weight_params, rounded)
    err = ref - matmul(qx, qw)
    return np.einsum("ij,ij->i", err, err, optimize=False)


def les_grad(
    x: Tensor,
    w: Tensor,
    tau,
    act_params: QuantParams,
    weight_params: QuantParams,
    sample_weights=None,
    *,
    rounded: bool = True,
) -> np.ndarray:
    """Gradient of the weighted mean loss with respect to log_tau.

    Straight-through semantics: round contributes identity, clamped elements
    contribute nothing, and the quantizer scales are treated as constants.
    sample_weights defaults to all ones; it must already be frozen for the
    batch (the optimizer reads the weighter before updating it).
    """
    x = as_real(x, "activations")
    w = as_real(w, "weight")
    tau = _check_tau(tau, x.shape[1])
    b = x.shape[0]
    if sample_weights is None:
        lam = np.ones(b)
    else:
        lam = as_real(sample_weights, "sample weights").reshape(-1)
        if lam.shape[0] != b:
            raise DimensionError("one sample weight per activation row required")
    ref = matmul(x, w)
    x_hat, w_hat = _scaled_pair(x, w, tau)
    qx, mask_x = _fake_quant(x_hat, act_params, rounded)
    qw, mask_w = _fake_quant(w_hat, weight_params, rounded)
    err = ref - matmul(qx, qw)
    # d(loss)/d(Qx Qw) with the -2/B and per-sample weights folded in.
    g = (-2.0 / b) * (lam[:, None] * err)
    # Activation route: d x_hat / d log_tau_c = -x_hat[:, c].
    act_side = np.einsum(
        "ic,ic->c", matmul(g, qw.T), np.where(mask_x, -x_hat, 0.0), optimize=False
    )
    # Weight route: d w_hat / d log_tau_c = +w_hat[c, :].
    wgt_side = np.einsum(
        "cj,cj->c", matmul(qx.T, g), np.where(mask_w, w_hat, 0.0), optimize=False
    )
    return act_side + wgt_side


@dataclass
class LesState:
    """Mutable optimizer state for one layer's scaling factors."""

    log_tau: np.ndarray
    learning_rate: float
    iteration: int = 0
    grad_accumulator: np.ndarray = None
    grad_sq_accumulator: np.ndarray = None

    def __post_init__(self):
        self.log_tau = np.asarray(self.log_tau, dtype=np.float64)
        if self.grad_accumulator is None:
            self.grad_accumulator = np.zeros_like(self.log_tau)
        if self.grad_sq_accumulator is None:
            self.grad_sq_accumulator = np.zeros_like(self.log_tau)

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.log_tau)


@dataclass
class LesResult:
    """Outcome of optimizing one layer: best factors plus bookkeeping."""

    tau: np.ndarray
    initial_loss: float
    final_loss: float
    state: LesState


def _mean_full_loss(
    ref: Tensor, x: Tensor, w: Tensor, tau: np.ndarray,
    bits_a: int, bits_w: int, act_signed: bool,
) -> float:
    """Deployment-faithful mean loss: fresh MinMax at this tau, real rounding."""
    x_hat, w_hat = _scaled_pair(x, w, tau)
    act_p, wgt_p = _default_params(x_hat, w_hat, bits_a, bits_w, act_signed)
    qx, _ = _fake_quant(x_hat, act_p, True)
    qw, _ = _fake_quant(w_hat, wgt_p, True)
    err = ref - matmul(qx, qw)
    return float(np.mean(np.einsum("ij,ij->i", err, err, optimize=False)))


def optimize_layer(
    record: LayerCalibRecord,
    weighter: TimestepWeighter,
    rng: Rng,
    *,
    bits_a: int = 8,
    bits_w: int = 4,
    iterations: int = 200,
    lr: float = 1e-2,
    batch_size: int = 32,
    optimizer: str = "gd",
    scale_refresh: int = 10,
    act_signed: bool = True,
) -> LesResult:
    """Learn per-channel factors for one layer by straight-through descent.

    Batches are drawn from a seeded shuffle, reshuffled each epoch. The
    quantizer grid is refreshed by MinMax every scale_refresh iterations and
    frozen in between. A keep-best snapshot guards the outcome: the returned
    tau is the one with the lowest full-set mean loss ever observed, so the
    result is never worse than the tau=1 starting point.
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    if batch_size < 1:
        raise DomainError("batch_size must be >= 1")
    if optimizer not in ("gd", "adam"):
        raise DomainError(f"unknown optimizer {optimizer!r}")
    if scale_refresh < 1:
        raise DomainError("scale_refresh must be >= 1")
    x, w = record.activations, record.weight
    c_in = x.shape[1]
    n_rows = x.shape[0]
    ref = matmul(x, w)
    state = LesState(np.zeros(c_in), lr)
    best_tau = np.ones(c_in)
    initial = _mean_full_loss(ref, x, w, best_tau, bits_a, bits_w, act_signed)
    best = initial
    act_p = wgt_p = None
    order = rng.permutation(n_rows)
    cursor = 0
    while state.iteration < iterations:
        if cursor >= n_rows:
            order = rng.permutation(n_rows)
            cursor = 0
        batch = order[cursor : cursor + batch_size]
        cursor += batch_size
        tau = state.tau
        if state.iteration % scale_refresh == 0 or act_p is None:
            x_hat, w_hat = _scaled_pair(x, w, tau)
            act_p, wgt_p = _default_params(x_hat, w_hat, bits_a, bits_w, act_signed)
        xb = x[batch]
        tb = record.timesteps[batch]
        losses = les_loss(
            xb, w, tau, bits_a, bits_w, act_p, wgt_p, act_signed=act_signed
        )
        lam = np.array([weighter.weight(int(t)) for t in tb])
        grad = les_grad(xb, w, tau, act_p, wgt_p, sample_weights=lam)
        weighter.weighted_mean(losses, tb)
        # Outlier layers produce enormous early gradients; a norm clip keeps
        # log-space steps sane without touching the descent direction.
        gnorm = float(np.sqrt(np.sum(grad * grad)))
        if gnorm > _MAX_GRAD_NORM:
            grad = grad * (_MAX_GRAD_NORM / gnorm)
        if optimizer == "gd":
            state.log_tau = state.log_tau - lr * grad
        else:  # adam
            b1, b2, eps = 0.9, 0.999, 1e-8
            state.grad_accumulator = b1 * state.grad_accumulator + (1 - b1) * grad
            state.grad_sq_accumulator = (
                b2 * state.grad_sq_accumulator + (1 - b2) * grad * grad
            )
            k = state.iteration + 1
            m_hat = state.grad_accumulator / (1 - b1**k)
            v_hat = state.grad_sq_accumulator / (1 - b2**k)
            state.log_tau = state.log_tau - lr * m_hat / (np.sqrt(v_hat) + eps)
        np.clip(state.log_tau, -_LOG_TAU_BOUND, _LOG_TAU_BOUND, out=state.log_tau)
        state.iteration += 1
        candidate = _mean_full_loss(ref, x, w, state.tau, bits_a, bits_w, act_signed)
        if candidate < best:
            best = candidate
            best_tau = state.tau
    return LesResult(best_tau, initial, best, state)


def fuse(tau, act_params: QuantParams, w: Tensor) -> tuple[np.ndarray, Tensor]:
    """Fold learned factors into deployable form.

    Returns the per-channel activation divisors (tau_c * act scale) and the
    row-scaled weight tensor, ready for fresh per-column weight MinMax.
    Quantizing X against the fused divisors yields the same codes as
    dividing by tau first and quantizing with the plain scale.
    """
    w = as_real(w, "weight")
    if w.ndim != 2:
        raise DimensionError("weight must be 2-d")
    tau = _check_tau(tau, w.shape[0])
    if act_params.axis is not None:
        raise DomainError("fused activation quantization requires a per-tensor scale")
    fused = tau * act_params.scale
    return fused, channel_mul(w, tau)


def smoothquant_tau(x: Tensor, w: Tensor, alpha: float = 0.5) -> np.ndarray:
    """Closed-form migration baseline: tau_c = max|X_c|^a / max|W_c|^(1-a).

    Channels where either statistic vanishes fall back to 1. Provided as a
    pass-through alternative to the learned factors; no tuning, no claims.
    """
    x = as_real(x, "activations")
    w = as_real(w, "weight")
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"incompatible layer shapes {x.shape} and {w.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise DomainError("alpha must lie in [0, 1]")
    act_max = np.max(np.abs(x), axis=0)
    wgt_max = np.max(np.abs(w), axis=1)
    tau = np.where(
        (act_max > 0) & (wgt_max > 0),
        act_max**alpha / np.where(wgt_max > 0, wgt_max, 1.0) ** (1.0 - alpha),
        1.0,
    )
    return np.maximum(tau, 1e-5)
