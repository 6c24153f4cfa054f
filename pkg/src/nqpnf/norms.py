"""Upper bounds for analytic sup-norms from Chebyshev-Fourier-Taylor coefficients.

A function analytic on the complex width-``w`` neighbourhood of a real interval of
half-length ``L`` is bounded there by ``sum |c_n| rho^n`` with ``rho`` the
parameter of the smallest Bernstein ellipse containing the neighbourhood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import spectral as sp
from .series import DomainSpec, FTSeries, HamSeries, Interval, SeriesError, VectorField3


@dataclass(frozen=True)
class Weights:
    rho: float
    tau: float
    t: float

    def __post_init__(self):
        for name in ("rho", "tau", "t"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise SeriesError(f"weight {name} must be positive, got {val}")

    def __mul__(self, alpha: float) -> Weights:
        return Weights(self.rho * alpha, self.tau * alpha, self.t * alpha)

    __rmul__ = __mul__

    def __truediv__(self, alpha: float) -> Weights:
        return self * (1.0 / alpha)

    def __le__(self, other: Weights) -> bool:
        return self.rho <= other.rho and self.tau <= other.tau and self.t <= other.t

    def as_tuple(self) -> tuple[float, float, float]:
        return self.rho, self.tau, self.t

    def to_dict(self) -> dict:
        return {"rho": self.rho, "tau": self.tau, "t": self.t}


@dataclass(frozen=True)
class NormBound:
    """``value = sum_k per_mode[k] e^{|k| s}``.

    ``ellipse_margins`` holds, per Chebyshev direction, the share of the bound
    contributed by the top quarter of degrees; values near 1 mean the ellipse
    weights dominate the coefficient decay and the bound is unreliable.
    """

    value: float
    per_mode: list = field(default_factory=list)
    ellipse_margins: tuple = ()

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "per_mode": [[int(k), float(b)] for k, b in self.per_mode],
            "ellipse_margins": list(self.ellipse_margins),
        }


def ellipse_factor(width: float, half_length: float) -> float:
    """Bernstein parameter of the smallest ellipse containing the width-neighbourhood."""
    if half_length <= 0:
        raise SeriesError("half_length must be positive")
    if width <= 0:
        return 1.0
    a = width / half_length
    return (1.0 + a) + math.sqrt(a * a + 2.0 * a)


def _factors(domain: DomainSpec, ham: bool = False) -> list[float]:
    out = [
        ellipse_factor(domain.r, domain.I_base.half_length),
        ellipse_factor(domain.sigma, domain.y_base.half_length),
    ]
    if ham:
        out.append(ellipse_factor(domain.xi, domain.x_base.half_length))
    return out


def _weighted_abs(c: np.ndarray, factors: list[float], first_axis: int) -> np.ndarray:
    """``|c|`` times ``rho_i^{n_i}`` along trailing Chebyshev axes starting at ``first_axis``."""
    w = np.abs(c)
    for i, rho in enumerate(factors):
        ax = first_axis + i
        n = np.arange(c.shape[ax])
        shape = [1] * c.ndim
        shape[ax] = -1
        w = w * (rho ** n).reshape(shape)
    return w


def sup_bound(coeffs: np.ndarray, domain: DomainSpec) -> float:
    """Bound on the sup of a single-mode function ``sum c_ab T_a T_b`` (or with x) over the complex box."""
    coeffs = np.asarray(coeffs)
    factors = _factors(domain, ham=coeffs.ndim == 3)
    return float(_weighted_abs(coeffs, factors, 0).sum())


def _margins(weighted: np.ndarray, first_axis: int, n_axes: int) -> tuple:
    total = weighted.sum()
    out = []
    for i in range(n_axes):
        ax = first_axis + i
        n = weighted.shape[ax]
        if total == 0 or n < 4:
            out.append(0.0)
            continue
        top = np.take(weighted, np.arange(n - n // 4, n), axis=ax).sum()
        out.append(float(top / total))
    return tuple(out)


def _exp_sum(log_terms: np.ndarray) -> float:
    if log_terms.size == 0 or np.all(np.isneginf(log_terms)):
        return 0.0
    return float(np.exp(logsumexp(log_terms)))


def scalar_norm(f: FTSeries, domain: DomainSpec | None = None) -> NormBound:
    """``sum_k sup|f_k| e^{|k| s}`` with sup bounded through Bernstein ellipses."""
    domain = domain or f.domain
    w = _weighted_abs(f.coeff, _factors(domain), 1)
    per = w.sum(axis=(1, 2))
    ks = np.arange(-f.kmax, f.kmax + 1)
    with np.errstate(divide="ignore"):
        logs = np.log(per) + np.abs(ks) * domain.s
    return NormBound(_exp_sum(logs), list(zip(ks.tolist(), per.tolist())), _margins(w, 1, 2))


def norm(f: FTSeries, domain: DomainSpec | None = None) -> float:
    return scalar_norm(f, domain).value


def vf_norm(X: VectorField3, domain: DomainSpec | None, w: Weights) -> float:
    """Weighted norm ``sum_i w_i^{-1} ||X_i||``."""
    domain = domain or X.domain
    return sum(norm(c, domain) / wi for c, wi in zip(X.components, w.as_tuple()))


def ham_norm(phi: HamSeries, domain: DomainSpec | None = None, include_x: bool = True) -> float:
    """``sum_{k,h,j} sup|phi_khj| e^{s|k|} delta^{h+j}``.

    With ``include_x=False`` the x direction is bounded on the real interval only.
    """
    domain = domain or phi.domain
    factors = _factors(domain, ham=True)
    if not include_x:
        factors[2] = 1.0
    w = _weighted_abs(phi.coeff, factors, 3).sum(axis=(3, 4, 5))
    ks = np.abs(np.arange(-phi.kmax, phi.kmax + 1))[:, None, None]
    hj = np.arange(phi.pqmax + 1)
    deg = hj[:, None] + hj[None, :]
    with np.errstate(divide="ignore"):
        logd = math.log(domain.delta) if domain.delta > 0 else -np.inf
        logs = np.log(w) + ks * domain.s + np.where(deg[None] == 0, 0.0, deg[None] * logd)
    return _exp_sum(logs)


def diam_bound(domain: DomainSpec) -> float:
    """Diameter of the complex neighbourhood of the y interval."""
    return domain.y_base.length + 2.0 * domain.sigma


def x_extent(domain: DomainSpec) -> float:
    """``sup |x|`` over the complexified x interval."""
    return max(abs(domain.x_base.lo), abs(domain.x_base.hi)) + domain.xi


# ---------------------------------------------------------------------------
# sampled estimates (not bounds)
# ---------------------------------------------------------------------------


def stadium_boundary(interval: Interval, width: float, n: int) -> np.ndarray:
    """``n`` points on ``{z : dist(z, interval) = width}`` (the interval itself if width is 0)."""
    if width <= 0:
        return interval.from_unit(np.cos(np.linspace(0, np.pi, n)))
    L = interval.length
    perim = 2 * L + 2 * np.pi * width
    s = np.linspace(0, perim, n, endpoint=False)
    z = np.empty(n, dtype=complex)
    a, b = interval.lo, interval.hi
    for i, u in enumerate(s):
        if u < L:
            z[i] = a + u + 1j * width
        elif u < L + np.pi * width:
            th = (u - L) / width
            z[i] = b + width * np.exp(1j * (np.pi / 2 - th))
        elif u < 2 * L + np.pi * width:
            z[i] = b - (u - L - np.pi * width) - 1j * width
        else:
            th = (u - 2 * L - np.pi * width) / width
            z[i] = a + width * np.exp(1j * (3 * np.pi / 2 - th))
    return z


def _mode_values(f: FTSeries, I, y) -> np.ndarray:
    """Values of each ``f_k`` at complex points; shape ``(2K+1,) + I.shape``."""
    VI = sp.cheb_vander(f.domain.I_base.to_unit(I), f.dI)
    Vy = sp.cheb_vander(f.domain.y_base.to_unit(y), f.dy)
    return np.einsum("kab,...a,...b->k...", f.coeff, VI, Vy, optimize=True)


def sampled_sup(f: FTSeries, domain: DomainSpec | None = None, n: int = 32) -> float:
    """Sampled ``sum_k max|f_k| e^{|k|s}`` over the distinguished boundary.

    By the maximum principle in each variable this is the exact value of the
    norm up to sampling error; it is a lower estimate, useful to test bounds.
    """
    domain = domain or f.domain
    zI = stadium_boundary(domain.I_base, domain.r, n)
    zy = stadium_boundary(domain.y_base, domain.sigma, n)
    I, y = np.meshgrid(zI, zy, indexing="ij")
    vals = np.abs(_mode_values(f, I, y)).reshape(2 * f.kmax + 1, -1).max(axis=1)
    ks = np.abs(np.arange(-f.kmax, f.kmax + 1))
    return float((vals * np.exp(ks * domain.s)).sum())


def sampled_im_sup(f: FTSeries, domain: DomainSpec | None = None, n: int = 48) -> float:
    """Sampled ``sup |Im f|`` for phi-independent ``f`` over the complex (I, y) box.

    ``Im f`` is pluriharmonic, so its extrema sit on the distinguished boundary.
    """
    domain = domain or f.domain
    zI = stadium_boundary(domain.I_base, domain.r, n)
    zy = stadium_boundary(domain.y_base, domain.sigma, n)
    I, y = np.meshgrid(zI, zy, indexing="ij")
    vals = _mode_values(f, I, y)[f.kmax]
    return float(np.abs(vals.imag).max())
