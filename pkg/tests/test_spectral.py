from __future__ import annotations

import numpy as np
import numpy.polynomial.chebyshev as C
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqpnf import spectral as sp


@pytest.mark.parametrize("n", [1, 2, 7, 16])
def test_cheb_roundtrip_matches_numpy(n):
    rng = np.random.default_rng(n)
    c = rng.standard_normal(n)
    vals = sp.cheb_values(c, n, 0)
    np.testing.assert_allclose(vals, C.chebval(sp.cheb_nodes(n), c), atol=1e-13)
    np.testing.assert_allclose(sp.cheb_coeffs(vals, 0), c, atol=1e-13)


@pytest.mark.parametrize("K", [0, 1, 5])
def test_fourier_roundtrip(K):
    rng = np.random.default_rng(K)
    c = rng.standard_normal(2 * K + 1) + 1j * rng.standard_normal(2 * K + 1)
    m = 2 * K + 1
    vals = sp.fourier_values(c, m, 0)
    phi = sp.fourier_nodes(m)
    direct = sum(c[k + K] * np.exp(1j * k * phi) for k in range(-K, K + 1))
    np.testing.assert_allclose(vals, direct, atol=1e-13)
    np.testing.assert_allclose(sp.fourier_coeffs(vals, K, 0), c, atol=1e-13)


def test_taylor_roundtrip():
    c = np.array([1.0, -2.0, 0.5, 0.25])
    vals = sp.taylor_values(c, 8, 0)
    np.testing.assert_allclose(sp.taylor_coeffs(vals, 3, 0), c, atol=1e-14)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=12))
@settings(max_examples=40, deadline=None)
def test_vander_matches_chebval(coefs):
    c = np.array(coefs)
    t = np.linspace(-1.2, 1.2, 9) + 0.3j
    V = sp.cheb_vander(t, len(c) - 1)
    np.testing.assert_allclose(V @ c, C.chebval(t, c), atol=1e-10)


def test_diff_and_integ_agree_with_numpy():
    c = np.array([0.3, -1.0, 2.0, 0.5, 0.1])
    np.testing.assert_allclose(sp.cheb_diff(c, 0, 2.0)[:4], 2.0 * C.chebder(c), atol=1e-14)
    integ = sp.cheb_integ(c, 0, 0.5)
    np.testing.assert_allclose(integ, 0.5 * C.chebint(c, lbnd=-1), atol=1e-14)


@pytest.mark.parametrize("n", [2, 8, 32])
def test_clenshaw_curtis_exact_on_polynomials(n):
    x, w = sp.clenshaw_curtis(n)
    for deg in range(n + 1):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        assert abs(w @ x**deg - exact) < 1e-13


def test_clenshaw_curtis_weights_sum_to_two():
    # [TRIVIAL] integral of 1 over [-1, 1]
    assert abs(sp.clenshaw_curtis(17)[1].sum() - 2.0) < 1e-14
