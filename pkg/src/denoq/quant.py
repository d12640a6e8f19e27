"""Uniform symmetric quantization primitives.

The code grid is the usual two's complement range: an integer code q in
[l, u] represents the real value scale * q. Quantization is

    q = clamp(round(x / scale), l, u)

with round-half-to-even tie breaking. There is no zero point; ranges are
symmetric and zero is always exactly representable.

Scales are either a single per-tensor scalar or a per-channel vector along
one named axis. Activations that feed a factored integer matmul must use a
per-tensor scale: a scale that varied along the reduction axis could not be
pulled outside the accumulation, so :class:`QuantizedLayer` rejects that
layout at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, IntegrityError
from .tensor import IntTensor, Tensor, as_real

SCALE_FLOOR = 1e-12

# Bit-widths 2..16 are the supported storage range; 32 is accepted as a
# deliberately lossless pass-through mode used by sanity checks.
MAX_BITS = 32


def code_bounds(bits: int, signed: bool) -> tuple[int, int]:
    """Lowest and highest representable code for a bit-width."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass(frozen=True)
class QuantParams:
    """Scale, bit-width, signedness, and granularity of one quantizer.

    axis=None means one scale for the whole tensor; axis=k means one scale
    per index of dimension k (scale is then a 1-d vector).
    """

    scale: object
    bits: int
    signed: bool = True
    axis: int | None = None

    def __post_init__(self):
        if not (2 <= self.bits <= MAX_BITS):
            raise DomainError(f"bits must be in [2, {MAX_BITS}], got {self.bits}")
        if self.axis is None:
            s = float(self.scale)
            if not np.isfinite(s) or s <= 0.0:
                raise DomainError(f"per-tensor scale must be a positive real, got {s}")
            object.__setattr__(self, "scale", s)
        else:
            s = np.asarray(self.scale, dtype=np.float64)
            if s.ndim != 1:
                raise DimensionError("per-channel scale must be a 1-d vector")
            if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
                raise DomainError("per-channel scales must all be positive reals")
            object.__setattr__(self, "scale", s)

    @property
    def bounds(self) -> tuple[int, int]:
        return code_bounds(self.bits, self.signed)

    def scale_for(self, shape: tuple) -> np.ndarray | float:
        """Scale broadcast against a tensor of the given shape."""
        if self.axis is None:
            return self.scale
        if not (-len(shape) <= self.axis < len(shape)):
            raise DimensionError(f"axis {self.axis} invalid for shape {shape}")
        if shape[self.axis] != self.scale.shape[0]:
            raise DimensionError(
                f"per-channel scale has {self.scale.shape[0]} entries but "
                f"dimension {self.axis} of shape {shape} is {shape[self.axis]}"
            )
        expand = [1] * len(shape)
        expand[self.axis] = self.scale.shape[0]
        return self.scale.reshape(expand)


def quantize(x: Tensor, params: QuantParams) -> IntTensor:
    """Quantize a real tensor to integer codes.

    Rounds half to even (numpy rint), then clamps to the representable
    range. Returns an IntTensor tagged with the nominal bit-width.
    """
    x = as_real(x, "quantize input")
    s = params.scale_for(x.shape)
    l, u = params.bounds
    codes = np.clip(np.rint(x / s), l, u).astype(np.int64)
    return IntTensor(codes, params.bits)


def dequantize(q: IntTensor, params: QuantParams) -> Tensor:
    """Map integer codes back to reals: scale * code.

    Codes outside the declared range mean the tensor was not produced by a
    matching quantizer, so that is rejected rather than silently clamped.
    """
    if not isinstance(q, IntTensor):
        raise DomainError("dequantize expects an IntTensor")
    if q.nominal_bits != params.bits:
        raise IntegrityError(
            f"codes carry nominal_bits={q.nominal_bits} but params.bits={params.bits}"
        )
    l, u = params.bounds
    if q.codes.size and (q.codes.min() < l or q.codes.max() > u):
        raise IntegrityError(f"codes fall outside [{l}, {u}]")
    s = params.scale_for(q.codes.shape)
    return q.codes.astype(np.float64) * s


def minmax_scale(
    x: Tensor, bits: int, signed: bool = True, axis: int | None = None
) -> QuantParams:
    """Standard MinMax calibration: scale = max magnitude / largest code.

    Channels with zero range get the floor 1e-12 so division stays defined.
    """
    x = as_real(x, "minmax input")
    _, u = code_bounds(bits, signed)
    mags = np.abs(x) if signed else np.maximum(x, 0.0)
    if axis is None:
        m = float(np.max(mags)) if x.size else 0.0
        return QuantParams(max(m / u, SCALE_FLOOR), bits, signed, None)
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis % x.ndim)
    m = np.max(mags, axis=reduce_axes)
    scale = np.maximum(m / u, SCALE_FLOOR)
    return QuantParams(scale, bits, signed, axis)


# ---------------------------------------------------------------------------
# Quantized layers and the real-arithmetic execution oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizedLayer:
    """Everything needed to run one quantized matmul site.

    Fields:
        weight_codes: integer weight codes, [C_in x C_out].
        weight_params: weight quantizer; per-tensor or one scale per output
            column (axis=1).
        act_params: activation quantizer; must be per-tensor, because the
            factored product needs a scale that is constant along the
            reduction axis.
        fused_tau: per-input-channel activation divisors, already fused with
            the activation scale (tau_c * act scale).
        pts_exponents: per-input-channel power-of-two exponents (>= 0). Zero
            everywhere when channel rescue is off.
    """

    name: str
    weight_codes: IntTensor
    weight_params: QuantParams
    act_params: QuantParams
    fused_tau: np.ndarray
    pts_exponents: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weight_codes.codes.ndim != 2:
            raise DimensionError("weight codes must be 2-d [C_in x C_out]")
        c_in, c_out = self.weight_codes.codes.shape
        if self.act_params.axis is not None:
            raise DomainError(
                "activation scales must be per-tensor: a per-channel scale on "
                "the reduction axis cannot be factored out of the accumulation"
            )
        if self.weight_params.axis not in (None, 1):
            raise DomainError("weight scales must be per-tensor or per output column")
        if self.weight_params.axis == 1 and self.weight_params.scale.shape[0] != c_out:
            raise DimensionError("one weight scale per output column required")
        fused = as_real(self.fused_tau, "fused activation divisors").reshape(-1)
        if fused.shape[0] != c_in:
            raise DimensionError("fused_tau must have one entry per input channel")
        if np.any(fused <= 0.0):
            raise DomainError("fused activation divisors must be strictly positive")
        object.__setattr__(self, "fused_tau", fused)
        delta = self.pts_exponents
        if delta is None:
            delta = np.zeros(c_in, dtype=np.int64)
        delta = np.asarray(delta)
        if not np.issubdtype(delta.dtype, np.integer):
            raise DomainError("pts_exponents must be integers")
        delta = delta.astype(np.int64)
        if delta.shape != (c_in,):
            raise DimensionError("pts_exponents must have one entry per input channel")
        if delta.size and delta.min() < 0:
            raise DomainError("pts_exponents must be non-negative")
        object.__setattr__(self, "pts_exponents", delta)

    @property
    def c_in(self) -> int:
        return self.weight_codes.codes.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight_codes.codes.shape[1]

    def weight_scale_vector(self) -> np.ndarray:
        if self.weight_params.axis == 1:
            return self.weight_params.scale
        return np.full(self.c_out, self.weight_params.scale, dtype=np.float64)


def activation_codes(x: Tensor, layer: QuantizedLayer) -> IntTensor:
    """Integer activation codes for a layer's input.

    The per-channel divisor is 2^delta_c * fused_tau_c; multiplying by an
    exact power of two only touches the float exponent, so this equals the
    divide-by-tau-then-quantize path bit for bit.
    """
    divisor = np.exp2(layer.pts_exponents.astype(np.float64)) * layer.fused_tau
    params = QuantParams(divisor, layer.act_params.bits, layer.act_params.signed, axis=1)
    return quantize(x, params)


def apply_output_scales(acc, act_scale: float, weight_scales: np.ndarray) -> Tensor:
    """Scale a raw accumulator into real outputs: (s_x * s_w_j) * acc_ij.

    The product of the two scales is formed first, exactly like the integer
    path's dequantization, so both paths agree bit for bit.
    """
    combined = float(act_scale) * np.asarray(weight_scales, dtype=np.float64)
    return np.asarray(acc, dtype=np.float64) * combined[None, :]


def quantized_matmul_reference(x: Tensor, layer: QuantizedLayer) -> Tensor:
    """Real-arithmetic oracle for quantized layer execution.

    Computes the factored product: integer codes are multiplied and summed
    in float64 with the scales applied outside the accumulation. Power-of-two
    exponents are folded onto the weight codes (exactly, since scaling by 2^d
    is exponent arithmetic). While codes and partial sums stay below 2^53 the
    whole accumulation is exact integer arithmetic, which is what makes the
    bit-shift integer path reproducible against this function bit for bit.
    """
    x = as_real(x, "layer input")
    if x.ndim != 2 or x.shape[1] != layer.c_in:
        raise DimensionError(
            f"layer input must be [B x {layer.c_in}], got {x.shape}"
        )
    codes_x = activation_codes(x, layer).codes.astype(np.float64)
    shifted_w = layer.weight_codes.codes.astype(np.float64) * np.exp2(
        layer.pts_exponents.astype(np.float64)
    )[:, None]
    acc = np.einsum("ik,kj->ij", codes_x, shifted_w, optimize=False)
    return apply_output_scales(acc, layer.act_params.scale, layer.weight_scale_vector())
