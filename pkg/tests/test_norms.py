from __future__ import annotations

import math

import numpy as np
import numpy.polynomial.chebyshev as C
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqpnf import norms as nm
from nqpnf import series as S
from nqpnf.norms import Weights
from nqpnf.series import DomainSpec, Interval, VectorField3

from conftest import random_ft

UNIT = DomainSpec(Interval(-1.0, 1.0), Interval(-1.0, 1.0), 0.5, 0.5, 0.2)


def test_weights_validation_and_ops():
    with pytest.raises(S.SeriesError, match="tau"):
        Weights(0.1, 0.0, 0.1)
    w = Weights(0.1, 0.2, 0.3)
    assert (w * 2).as_tuple() == pytest.approx((0.2, 0.4, 0.6))
    assert (w / 2) <= w and not (w <= w / 2)


@pytest.mark.parametrize(
    "width,L,expected",
    [
        (1.0, 1.0, 2 + math.sqrt(3)),  # 3.7320508...
        (0.5, 1.0, 1.5 + math.sqrt(1.25)),  # 2.6180340...
        (0.0, 1.0, 1.0),
    ],
)
def test_ellipse_factor_values(width, L, expected):
    assert nm.ellipse_factor(width, L) == pytest.approx(expected, rel=1e-15)


def test_ellipse_factor_limit_and_containment():
    assert nm.ellipse_factor(1e-12, 1.0) == pytest.approx(1.0, abs=2e-6)
    # the ellipse with parameter rho passes through (1 + w) on the real axis and contains i w above 0
    rho = nm.ellipse_factor(0.3, 1.0)
    assert 0.5 * (rho + 1 / rho) == pytest.approx(1.3)
    assert 0.5 * (rho - 1 / rho) >= 0.3


def test_sup_bound_examples():
    assert nm.sup_bound(np.array([[2.0 - 1j]]), UNIT) == pytest.approx(abs(2 - 1j))
    assert nm.sup_bound(np.zeros((3, 3)), UNIT) == 0
    d = UNIT.with_widths(sigma=0.5)
    bound = nm.sup_bound(np.array([[0.0, 1.0]]), d)
    assert bound == pytest.approx(2.6180339887, rel=1e-10)
    z = nm.stadium_boundary(d.y_base, 0.5, 2000)
    assert np.abs(z).max() == pytest.approx(1.5, rel=1e-6)  # true sup of |y|
    assert bound >= np.abs(z).max()


def test_scalar_norm_examples():
    assert nm.norm(S.constant(-3.0, UNIT)) == pytest.approx(3.0)
    assert nm.norm(S.fourier_mode(1, UNIT)) == pytest.approx(math.exp(0.2))
    cosphi = S.make_series(lambda I, y, phi: np.cos(phi), UNIT, 1, 0, 0)
    assert nm.norm(cosphi) == pytest.approx(math.exp(0.2))
    nb = nm.scalar_norm(cosphi)
    assert nb.value == pytest.approx(sum(b * math.exp(abs(k) * 0.2) for k, b in nb.per_mode))


def test_scalar_norm_large_kmax_no_overflow():
    c = np.zeros((2001, 1, 1), complex)
    c[0] = c[-1] = 1e-300
    f = S.FTSeries(c, UNIT.with_widths(s=1.0))
    assert math.isfinite(nm.norm(f)) and nm.norm(f) > 0


def test_vf_norm_examples():
    assert nm.vf_norm(S.vf_zeros(UNIT), UNIT, Weights(1, 1, 1)) == 0
    X = VectorField3(S.zeros(UNIT), S.zeros(UNIT), S.constant(1.0, UNIT))
    assert nm.vf_norm(X, UNIT, Weights(1, 1, 0.1)) == pytest.approx(10.0)


def test_ham_norm_examples():
    d = DomainSpec(Interval(0, 1), Interval(1, 2), 0.1, 0.1, 0.2, Interval(0, 1), 0.1, 0.5)
    assert nm.ham_norm(S.ham_constant(1.0, d)) == pytest.approx(1.0)
    assert nm.ham_norm(S.ham_monomial(d, 1, 1, 1)) == pytest.approx(math.exp(0.2) * 0.25)  # 0.30535
    assert nm.ham_norm(S.ham_monomial(d, 0, 1, 0)) == pytest.approx(0.5)


def test_diam_and_x_extent():
    d = DomainSpec(Interval(0, 1), Interval(1, 2), 0.1, 0.25, 0.1)
    assert nm.diam_bound(d) == pytest.approx(1.5)
    assert nm.diam_bound(d.with_widths(sigma=0.0)) == pytest.approx(1.0)
    h = DomainSpec(Interval(0, 1), Interval(1, 2), 0.1, 0.1, 0.1, Interval(-2, 1), 0.1, 0.3)
    assert nm.x_extent(h) == pytest.approx(2.1)


@pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
def test_homogeneity(alpha):
    X = VectorField3(*(random_ft(np.random.default_rng(i), UNIT) for i in range(3)))
    w = Weights(0.01, 0.02, 0.05)
    a = nm.vf_norm(X, UNIT, w * alpha) * alpha
    b = nm.vf_norm(X, UNIT, w)
    assert abs(a - b) <= 1e-14 * b


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_monotonicity(seed):
    rng = np.random.default_rng(seed)
    X = VectorField3(*(random_ft(rng, UNIT, 2, 3, 3) for _ in range(3)))
    u = UNIT.with_widths(r=rng.uniform(0, 0.3), sigma=rng.uniform(0, 0.3), s=rng.uniform(0, 0.3))
    big = u.with_widths(r=u.r + rng.uniform(0, 0.2), sigma=u.sigma + rng.uniform(0, 0.2), s=u.s + rng.uniform(0, 0.2))
    w = Weights(*rng.uniform(0.01, 0.1, 3))
    w_big = Weights(*(np.array(w.as_tuple()) * rng.uniform(1, 3, 3)))
    assert nm.vf_norm(X, u, w) <= nm.vf_norm(X, big, w) * (1 + 1e-14)
    assert nm.vf_norm(X, u, w_big) <= nm.vf_norm(X, u, w) * (1 + 1e-14)


@given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_triangle_and_absolute_homogeneity(seed, c):
    rng = np.random.default_rng(seed)
    f, g = random_ft(rng, UNIT), random_ft(rng, UNIT)
    assert nm.norm(f + g) <= (nm.norm(f) + nm.norm(g)) * (1 + 1e-14)
    assert nm.norm(c * f) == pytest.approx(abs(c) * nm.norm(f), rel=1e-13, abs=1e-300)


def _cheb_sup_oracle(c, d, n=1000):
    """Sampled sup over the boundary of the complex box, with numpy's chebval as the evaluator."""
    m = int(math.sqrt(n))
    zI = d.I_base.to_unit(nm.stadium_boundary(d.I_base, d.r, m))
    zy = d.y_base.to_unit(nm.stadium_boundary(d.y_base, d.sigma, m))
    gI, gy = np.meshgrid(zI, zy, indexing="ij")
    vals = C.chebval2d(gI, gy, c)
    return np.abs(vals).max()


@pytest.mark.parametrize("seed", range(50))
def test_sup_bound_sound_against_sampling(seed):
    rng = np.random.default_rng(1000 + seed)
    d = UNIT.with_widths(r=rng.uniform(0, 0.5), sigma=rng.uniform(0, 0.5))
    c = random_ft(rng, d, 0, 5, 5, decay=0.6).coeff[0]
    assert _cheb_sup_oracle(c, d) <= nm.sup_bound(c, d) * (1 + 1e-12)


def test_sampled_im_sup_real_function_is_zero_on_real_domain():
    f = S.make_series(lambda I, y, phi: I / y, DomainSpec(Interval(0.5, 1.5), Interval(1, 2), 0, 0, 0.1), 0, 4, 12)
    assert nm.sampled_im_sup(f) < 1e-12


def test_ellipse_margin_flags_slow_decay():
    slow = S.FTSeries(np.ones((1, 1, 20), complex), UNIT)
    fast = S.FTSeries((0.1 ** np.arange(20)).reshape(1, 1, 20).astype(complex), UNIT)
    assert nm.scalar_norm(slow).ellipse_margins[1] > 0.9
    assert nm.scalar_norm(fast).ellipse_margins[1] < 1e-3
