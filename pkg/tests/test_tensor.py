import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoq.errors import DimensionError, DomainError
from denoq.tensor import IntTensor, Rng, as_real, channel_div, channel_mul, matmul


def naive_matmul(a, b):
    """Triple-loop reference, deliberately independent of numpy matmul."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop():
    rng = Rng(11)
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((5, 9))
    got = matmul(a, b)
    want = naive_matmul(a, b)
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_matmul_is_reproducible_not_blas_order_dependent():
    rng = Rng(3)
    a = rng.standard_normal((33, 65))
    b = rng.standard_normal((65, 17))
    first = matmul(a, b)
    again = matmul(a.copy(), b.copy())
    assert np.array_equal(first, again)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 2)))


def test_as_real_rejects_non_finite():
    with pytest.raises(DomainError, match="stats"):
        as_real(np.array([1.0, np.nan]), "stats")
    with pytest.raises(DomainError):
        as_real(np.array([np.inf]), "x")


def test_as_real_converts_and_preserves():
    out = as_real([[1, 2], [3, 4]], "x")
    assert out.dtype == np.float64
    assert out.shape == (2, 2)


class TestChannelOps:
    def test_div_then_mul_is_identity(self):
        rng = Rng(5)
        x = rng.standard_normal((10, 6))
        w = rng.standard_normal((6, 4))
        v = np.exp(rng.standard_normal(6))
        assert np.allclose(channel_div(channel_mul(x.T, v).T, v), x, atol=1e-15)
        y1 = matmul(x, w)
        y2 = matmul(channel_div(x, v), channel_mul(w, v))
        assert np.allclose(y1, y2, rtol=1e-12)

    def test_div_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            channel_div(np.ones((2, 3)), np.array([1.0, 0.0, 1.0]))
        with pytest.raises(DomainError):
            channel_div(np.ones((2, 3)), np.array([1.0, -2.0, 1.0]))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            channel_div(np.ones((2, 3)), np.ones(4))
        with pytest.raises(DimensionError):
            channel_mul(np.ones((3, 2)), np.ones(2))


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 12),
    c=st.integers(1, 12),
    m=st.integers(1, 12),
)
def test_scaling_identity_property(seed, n, c, m):
    """Dividing activation columns and multiplying weight rows by the same
    positive factors never changes the product (up to float error)."""
    rng = Rng(seed)
    x = rng.standard_normal((n, c))
    w = rng.standard_normal((c, m))
    tau = np.exp(rng.uniform(-3.0, 3.0, c))
    direct = matmul(x, w)
    scaled = matmul(channel_div(x, tau), channel_mul(w, tau))
    scale = np.max(np.abs(direct)) + 1.0
    assert np.max(np.abs(direct - scaled)) <= 1e-12 * scale


class TestIntTensor:
    def test_range_check(self):
        IntTensor(np.array([[-8, 7]]), 4)
        with pytest.raises(DomainError):
            IntTensor(np.array([[-9]]), 4)
        with pytest.raises(DomainError):
            IntTensor(np.array([[8]]), 4)

    def test_bits_bounds(self):
        with pytest.raises(DomainError):
            IntTensor(np.array([0]), 1)
        with pytest.raises(DomainError):
            IntTensor(np.array([0]), 65)

    def test_rejects_float_codes(self):
        with pytest.raises(DomainError):
            IntTensor(np.array([1.5]), 8)


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(99).standard_normal(8)
        b = Rng(99).standard_normal(8)
        assert np.array_equal(a, b)

    def test_children_are_independent_and_stable(self):
        r = Rng(1)
        c1 = r.child("calib").standard_normal(4)
        c2 = Rng(1).child("calib").standard_normal(4)
        assert np.array_equal(c1, c2)
        other = Rng(1).child("other").standard_normal(4)
        assert not np.array_equal(c1, other)

    def test_child_does_not_advance_parent(self):
        r1, r2 = Rng(7), Rng(7)
        r1.child("x")
        assert np.array_equal(r1.standard_normal(3), r2.standard_normal(3))

    def test_permutation_covers_range(self):
        p = Rng(0).permutation(50)
        assert sorted(p.tolist()) == list(range(50))

    def test_integers_bounds(self):
        draws = Rng(2).integers(1, 11, 1000)
        assert draws.min() >= 1 and draws.max() <= 10
