"""Low-level transforms between coefficients and grid values.

Three axis kinds appear in the series types:

``fourier``
    dense modes ``k = -K..K`` stored at index ``k + K``; grid ``phi_m = 2 pi m / M``.
``cheb``
    Chebyshev coefficients ``c_0..c_d`` on ``[-1, 1]``; grid = Chebyshev points
    of the first kind, ``cos(pi (2j + 1) / (2n))``.
``taylor``
    monomial coefficients ``c_0..c_d``; grid = ``M``-th roots of unity.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import fft


def cheb_nodes(n: int) -> np.ndarray:
    """First-kind Chebyshev points on [-1, 1] in DCT order (decreasing)."""
    j = np.arange(n)
    return np.cos(np.pi * (2 * j + 1) / (2 * n))


def fourier_nodes(m: int) -> np.ndarray:
    return 2 * np.pi * np.arange(m) / m


def cheb_values(coef: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Evaluate Chebyshev series along ``axis`` at ``n`` first-kind nodes (``n >= deg + 1``)."""
    coef = np.moveaxis(coef, axis, -1)
    d = coef.shape[-1]
    if n < d:
        raise ValueError("grid smaller than degree")
    pad = np.zeros(coef.shape[:-1] + (n,), dtype=complex)
    pad[..., :d] = coef
    pad[..., 1:] *= 0.5
    vals = fft.dct(pad, type=3, axis=-1)
    return np.moveaxis(vals, -1, axis)


def cheb_coeffs(values: np.ndarray, axis: int) -> np.ndarray:
    """Chebyshev interpolation coefficients from values at first-kind nodes."""
    values = np.moveaxis(np.asarray(values, dtype=complex), axis, -1)
    n = values.shape[-1]
    c = fft.dct(values, type=2, axis=-1) / n
    c[..., 0] *= 0.5
    return np.moveaxis(c, -1, axis)


def fourier_values(coef: np.ndarray, m: int, axis: int) -> np.ndarray:
    """Values of ``sum_k c_k e^{ik phi}`` at ``m`` equispaced nodes; ``m >= 2K + 1``."""
    coef = np.moveaxis(coef, axis, -1)
    K = (coef.shape[-1] - 1) // 2
    if m < 2 * K + 1:
        raise ValueError("grid too small for Fourier modes")
    buf = np.zeros(coef.shape[:-1] + (m,), dtype=complex)
    ks = np.arange(-K, K + 1)
    buf[..., ks % m] = coef
    vals = fft.ifft(buf, axis=-1) * m
    return np.moveaxis(vals, -1, axis)


def fourier_coeffs(values: np.ndarray, K: int, axis: int) -> np.ndarray:
    """Modes ``-K..K`` of a trigonometric interpolant from equispaced values."""
    values = np.moveaxis(np.asarray(values, dtype=complex), axis, -1)
    m = values.shape[-1]
    full = fft.fft(values, axis=-1) / m
    ks = np.arange(-K, K + 1)
    out = full[..., ks % m]
    if 2 * K + 1 > m:
        # modes beyond the grid resolution alias; keep only resolvable ones
        mask = np.abs(ks) > (m - 1) // 2
        out[..., mask] = 0
    return np.moveaxis(out, -1, axis)


def taylor_values(coef: np.ndarray, m: int, axis: int) -> np.ndarray:
    """Values of ``sum_h c_h z^h`` at the ``m``-th roots of unity."""
    coef = np.moveaxis(coef, axis, -1)
    d = coef.shape[-1]
    if m < d:
        raise ValueError("grid smaller than degree")
    buf = np.zeros(coef.shape[:-1] + (m,), dtype=complex)
    buf[..., :d] = coef
    vals = fft.ifft(buf, axis=-1) * m
    return np.moveaxis(vals, -1, axis)


def taylor_coeffs(values: np.ndarray, d: int, axis: int) -> np.ndarray:
    values = np.moveaxis(np.asarray(values, dtype=complex), axis, -1)
    m = values.shape[-1]
    out = (fft.fft(values, axis=-1) / m)[..., : d + 1]
    if out.shape[-1] < d + 1:
        out = np.concatenate(
            [out, np.zeros(out.shape[:-1] + (d + 1 - out.shape[-1],), dtype=complex)], axis=-1
        )
    return np.moveaxis(out, -1, axis)


def cheb_vander(t, deg: int) -> np.ndarray:
    """``T_0..T_deg`` at (possibly complex) points ``t``; shape ``t.shape + (deg + 1,)``."""
    t = np.asarray(t)
    out = np.empty(t.shape + (deg + 1,), dtype=np.result_type(t, float))
    out[..., 0] = 1
    if deg >= 1:
        out[..., 1] = t
    for n in range(2, deg + 1):
        out[..., n] = 2 * t * out[..., n - 1] - out[..., n - 2]
    return out


def cheb_diff(coef: np.ndarray, axis: int, scale: float) -> np.ndarray:
    """Derivative along ``axis`` keeping the array shape (top coefficient becomes 0)."""
    d = coef.shape[axis]
    if d == 1:
        return np.zeros_like(coef)
    der = C.chebder(coef, m=1, scl=scale, axis=axis)
    pad = [(0, 0)] * coef.ndim
    pad[axis] = (0, 1)
    return np.pad(der, pad)


def cheb_integ(coef: np.ndarray, axis: int, scale: float) -> np.ndarray:
    """Antiderivative along ``axis`` (shape grows by one), vanishing at t = -1."""
    return C.chebint(coef, m=1, scl=scale, lbnd=-1, axis=axis)


@lru_cache(maxsize=64)
def clenshaw_curtis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n + 1``-point Clenshaw-Curtis rule on [-1, 1]."""
    if n == 0:
        return np.array([0.0]), np.array([2.0])
    theta = np.pi * np.arange(n + 1) / n
    x = np.cos(theta)
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2 * np.cos(2 * k * theta[1:-1]) / (4 * k * k - 1)
        v -= np.cos(n * theta[1:-1]) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[1:-1]) / (4 * k * k - 1)
    w[1:-1] = 2 * v / n
    return x, w
