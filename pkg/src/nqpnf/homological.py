"""Integral-operator solvers for the two homological equations.

Vector-field case: for ``N = (0, v, omega)`` solve ``[N, Y] = Z`` mode by mode
through line integrals in ``y`` from a base point ``y0``.  Hamiltonian case: for
each ``(k, h, j)`` solve ``v d_x phi + lambda phi = g`` along ``x`` from ``x = 0``.
Neither inversion divides by ``k omega``, so resonant frequencies are harmless.

Vector-field integrals are computed pointwise on the output collocation grid
with Clenshaw-Curtis quadrature and node doubling; the phase ``e^{ik Omega}`` is
applied at quadrature nodes, never expanded as a series.  The Hamiltonian
equation has x-constant coefficients at each (I, y) node and is solved
spectrally in x.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C

from . import spectral as sp
from .series import (
    ConstructionError,
    DomainSpec,
    FTSeries,
    HamSeries,
    SeriesError,
    VectorField3,
    diff,
    evaluate,
    ham_diff,
    ham_is_phi_independent,
    is_phi_independent,
    make_ham_series,
    make_series,
    mul,
    project_mean,
    reciprocal,
)

log = logging.getLogger(__name__)


class QuadratureError(SeriesError):
    pass


class DomainEscape(SeriesError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """Output degrees (``None`` = automatic) and quadrature controls."""

    dI: int | None = None
    dy: int | None = None
    dx: int | None = None
    tol: float = 1e-10
    n0: int = 16
    nmax: int = 4096


DEFAULT_OPTIONS = SolverOptions()


def _mode0_coeffs(f: FTSeries) -> np.ndarray:
    return np.asarray(project_mean(f).coeff[0])


def _values_2d(c: np.ndarray, I_unit, y_unit) -> np.ndarray:
    """Values of a 2-D Chebyshev array at ``I_unit[:, None]`` x ``y_unit`` (any trailing shape)."""
    VI = sp.cheb_vander(I_unit, c.shape[0] - 1)
    Vy = sp.cheb_vander(y_unit, c.shape[1] - 1)
    return np.einsum("ab,ia,i...b->i...", c, VI, Vy, optimize=True)


def _series_mode_values(f: FTSeries, I_unit, y_unit) -> np.ndarray:
    """All Fourier modes of ``f`` at I nodes ``(nI,)`` and y points ``(nI, ...)`` or broadcastable."""
    VI = sp.cheb_vander(I_unit, f.dI)
    Vy = sp.cheb_vander(y_unit, f.dy)
    return np.einsum("kab,ia,...b->ki...", f.coeff, VI, Vy, optimize=True)


# ---------------------------------------------------------------------------
# normal part
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalPart:
    """``N = (0, v(I, y), omega(I, y))`` with integration base point ``y0``."""

    v: FTSeries
    omega: FTSeries
    y0: float | None = None

    def __post_init__(self):
        if not (is_phi_independent(self.v) and is_phi_independent(self.omega)):
            raise SeriesError("v and omega must be phi-independent")
        if not self.v.domain.same_base(self.omega.domain):
            raise SeriesError("v and omega live on different domains")
        object.__setattr__(self, "v", project_mean(self.v))
        object.__setattr__(self, "omega", project_mean(self.omega))
        yb = self.v.domain.y_base
        y0 = yb.center if self.y0 is None else float(self.y0)
        if not yb.lo <= y0 <= yb.hi:
            raise SeriesError(f"y0 = {y0} outside the y interval")
        object.__setattr__(self, "y0", y0)
        reciprocal(self.v)  # raises on vanishing v

    @property
    def domain(self) -> DomainSpec:
        return self.v.domain

    def as_field(self) -> VectorField3:
        return VectorField3(0 * self.v, self.v, self.omega)

    def depends_on_I(self) -> bool:
        return bool(np.any(self.v.coeff[0, 1:]) or np.any(self.omega.coeff[0, 1:]))


class _LineIntegrator:
    """Shared machinery for the y-integrals on a fixed output grid.

    For every output I node the ratio ``omega / v`` is interpolated at high
    degree in y and integrated exactly, giving ``A(I, y) = int_{y0}^y omega / v``.
    """

    def __init__(self, N: NormalPart, dI: int, dy: int, opts: SolverOptions):
        self.N, self.opts = N, opts
        d = N.domain
        self.Iu = sp.cheb_nodes(dI + 1)
        self.yu = sp.cheb_nodes(dy + 1)
        self.y = d.y_base.from_unit(self.yu)
        self.y0 = N.y0
        self.v_c = _mode0_coeffs(N.v)
        self.w_c = _mode0_coeffs(N.omega)
        self.A_c = self._phase_coeffs()

    def _phase_coeffs(self) -> np.ndarray:
        d = self.N.domain
        n = 64
        while True:
            yu = sp.cheb_nodes(n + 1)
            ratio = _values_2d(self.w_c, self.Iu, np.broadcast_to(yu, (self.Iu.size, n + 1)))
            ratio = ratio / _values_2d(self.v_c, self.Iu, np.broadcast_to(yu, (self.Iu.size, n + 1)))
            c = sp.cheb_coeffs(ratio, 1)
            scale = np.abs(c).max(initial=0.0)
            if scale == 0 or np.abs(c[:, -8:]).max() <= 1e-15 * scale or n >= 2048:
                break
            n *= 2
        A = C.chebint(c, m=1, scl=d.y_base.half_length, axis=1)
        # shift so that A(y0) = 0
        A0 = np.einsum("ia,a->i", A, sp.cheb_vander(d.y_base.to_unit(self.y0), A.shape[1] - 1))
        A[:, 0] -= A0
        return A

    def phase(self, y_unit) -> np.ndarray:
        """``A(I_i, y)`` for y given per I node, shape ``(nI, ...)``."""
        V = sp.cheb_vander(y_unit, self.A_c.shape[1] - 1)
        return np.einsum("ia,...a->i...", self.A_c, V)

    def v_at(self, y_unit) -> np.ndarray:
        return _values_2d(self.v_c, self.Iu, np.broadcast_to(y_unit, (self.Iu.size,) + np.shape(y_unit)))

    def integrate(self, mode_fn: Callable, K: int, with_G: bool) -> np.ndarray:
        """Values ``(2K+1, nI, ny)`` of ``int_{y0}^{y_j} mode_fn(eta)/v e^{ik(A(eta)-A(y_j))} [v(y_j)/v(eta)] d eta``."""
        d = self.N.domain
        ks = np.arange(-K, K + 1)[:, None, None, None]
        yb = d.y_base
        A_end = self.phase(self.yu)  # (nI, ny)
        v_end = self.v_at(self.yu)
        half = 0.5 * (self.y - self.y0)  # (ny,)
        prev = None
        n = self.opts.n0
        while n <= self.opts.nmax:
            x, w = sp.clenshaw_curtis(n)
            eta = self.y0 + (x[None, :] + 1.0) * half[:, None]  # (ny, n+1)
            eu = yb.to_unit(eta)
            vals = mode_fn(eu)  # (2K+1, nI, ny, n+1)
            v_eta = self.v_at(eu)  # (nI, ny, n+1)
            ph = self.phase(eu) - A_end[:, :, None]
            integrand = vals / v_eta * np.exp(1j * ks * ph)
            if with_G:
                integrand = integrand * (v_end[:, :, None] / v_eta)
            res = np.einsum("kijm,m->kij", integrand, w) * half
            if prev is not None:
                scale = max(np.abs(res).max(initial=0.0), 1e-300)
                err = np.abs(res - prev).max(initial=0.0)
                if err <= self.opts.tol * scale or scale == 1e-300:
                    return res
            prev = res
            n *= 2
        raise QuadratureError(f"line integral did not converge with {self.opts.nmax} nodes")

    def to_series(self, values: np.ndarray) -> FTSeries:
        c = sp.cheb_coeffs(sp.cheb_coeffs(values, 1), 2)
        return FTSeries(c, self.N.domain)


def _auto_degrees(N: NormalPart, dI_in: int, dy_in: int, opts: SolverOptions) -> tuple[int, int]:
    dI = opts.dI if opts.dI is not None else (max(dI_in, 16) if N.depends_on_I() else dI_in)
    dy = opts.dy if opts.dy is not None else max(dy_in, 24)
    return dI, dy


def _series_fn(f: FTSeries, integ: _LineIntegrator):
    def fn(eu):
        return _series_mode_values(f, integ.Iu, eu)

    return fn


def _apply(N: NormalPart, g: FTSeries, with_G: bool, opts: SolverOptions) -> FTSeries:
    if not N.domain.same_base(g.domain):
        raise SeriesError("operand and normal part live on different domains")
    dI, dy = _auto_degrees(N, g.dI, g.dy, opts)
    integ = _LineIntegrator(N, dI, dy, opts)
    vals = integ.integrate(_series_fn(g, integ), g.kmax, with_G)
    return integ.to_series(vals)


def op_F(N: NormalPart, g: FTSeries, opts: SolverOptions = DEFAULT_OPTIONS) -> FTSeries:
    """``F[g]_k(I, y) = int_{y0}^y g_k / v * e^{ik (A(eta) - A(y))} d eta``."""
    return _apply(N, g, False, opts)


def op_G(N: NormalPart, g: FTSeries, opts: SolverOptions = DEFAULT_OPTIONS) -> FTSeries:
    """As :func:`op_F` with the extra factor ``v(I, y) / v(I, eta)``."""
    return _apply(N, g, True, opts)


def solve_vf_homological(
    N: NormalPart, Z: VectorField3, opts: SolverOptions = DEFAULT_OPTIONS
) -> VectorField3:
    """Triangular solve of ``[N, Y] = Z`` for every Fourier mode, k = 0 included."""
    if not N.domain.same_base(Z.domain):
        raise SeriesError("Z and N live on different domains")
    K, dI_in, dy_in = Z.cutoffs
    dI, dy = _auto_degrees(N, dI_in, dy_in, opts)
    integ = _LineIntegrator(N, dI, dy, opts)
    Z1, Z2, Z3 = Z.components

    dIv = _mode0_coeffs(diff(N.v, "I"))
    dIw = _mode0_coeffs(diff(N.omega, "I"))
    dyw = _mode0_coeffs(diff(N.omega, "y"))

    def coef_at(c, eu):
        return _values_2d(c, integ.Iu, np.broadcast_to(eu, (integ.Iu.size,) + eu.shape))

    Y1 = integ.to_series(integ.integrate(_series_fn(Z1, integ), K, False))

    def rhs2(eu):
        return _series_mode_values(Z2, integ.Iu, eu) + coef_at(dIv, eu) * _series_mode_values(Y1, integ.Iu, eu)

    Y2 = integ.to_series(integ.integrate(rhs2, K, True))

    def rhs3(eu):
        return (
            _series_mode_values(Z3, integ.Iu, eu)
            + coef_at(dIw, eu) * _series_mode_values(Y1, integ.Iu, eu)
            + coef_at(dyw, eu) * _series_mode_values(Y2, integ.Iu, eu)
        )

    Y3 = integ.to_series(integ.integrate(rhs3, K, False))
    return VectorField3(Y1, Y2, Y3)


def vf_operator(N: NormalPart, Y: VectorField3) -> VectorField3:
    """``L_N[Y] = [N, Y]``."""
    from .lie import lie_bracket

    return lie_bracket(N.as_field(), Y)


def vf_residual(N: NormalPart, Y: VectorField3, Z: VectorField3) -> float:
    """Relative l1 coefficient residual ``|[N, Y] - Z| / |Z|``."""
    r = (vf_operator(N, Y) - Z).l1()
    z = Z.l1()
    return r / z if z > 0 else r


def kernel_shift_vf(
    N: NormalPart,
    F0: Callable,
    kmax: int,
    a2: Callable | None = None,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> VectorField3:
    """An element of the kernel of ``L_N``.

    ``Y3 = F0(I, theta)`` with ``theta = phi - A(I, y)`` transported along the
    characteristics.  If ``a2`` is given, ``Y2 = v a2(I, theta)`` and the
    forced part ``F[d_y omega Y2]`` is added to ``Y3``.
    """
    d = N.domain
    dI, dy = _auto_degrees(N, 0, 0, opts)
    integ = _LineIntegrator(N, dI, dy, opts)
    A = integ.phase(integ.yu)  # (nI, ny)
    I_nodes = d.I_base.from_unit(integ.Iu)

    def build(fn, weight=None):
        phi = sp.fourier_nodes(2 * kmax + 1)[:, None, None]
        theta = phi - A[None]
        vals = np.asarray(fn(I_nodes[None, :, None], theta), dtype=complex) * np.ones_like(theta)
        if weight is not None:
            vals = vals * weight[None]
        if not np.all(np.isfinite(vals)):
            raise DomainEscape("kernel generator is not finite on the transported arguments")
        c = sp.fourier_coeffs(vals, kmax, 0)
        return integ.to_series(c)

    Y3 = build(F0)
    zero = 0 * Y3
    if a2 is None:
        return VectorField3(zero, zero, Y3)
    Y2 = build(a2, integ.v_at(integ.yu))
    dyw = diff(N.omega, "y")
    Y3 = Y3 + op_F(N, mul(dyw, Y2), replace(opts, dI=dI, dy=dy))
    return VectorField3(zero, Y2, Y3)


# ---------------------------------------------------------------------------
# Hamiltonian case
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HamFrequencies:
    """``omega = d_I h``, ``omega_prime = d_J h`` and ``v = d_y h`` for ``h = h0(I, y) + omega_prime * pq``."""

    omega: FTSeries
    omega_prime: FTSeries
    v: FTSeries

    def __post_init__(self):
        for name in ("omega", "omega_prime", "v"):
            f = getattr(self, name)
            if not is_phi_independent(f):
                raise SeriesError(f"{name} must be phi-independent")
            object.__setattr__(self, name, project_mean(f))
        reciprocal(self.v)

    @property
    def domain(self) -> DomainSpec:
        return self.v.domain

    @classmethod
    def from_h(cls, h: HamSeries, tol: float = 1e-10) -> HamFrequencies:
        """Split ``h`` into ``h0(I, y) + h1 pq`` and differentiate.

        ``h`` must be phi- and x-independent, contain only the monomials 1 and
        ``pq``, and ``h1`` must be constant so that the modal operator is exact.
        """
        if not ham_is_phi_independent(h):
            raise SeriesError("h must be phi-independent")
        c = np.asarray(h.coeff[h.kmax])
        mask = np.ones(c.shape[:2], bool)
        mask[0, 0] = False
        if h.pqmax >= 2:
            mask[1, 1] = False
        scale = max(np.abs(c).max(initial=0.0), 1.0)
        if np.abs(c[mask]).max(initial=0.0) > tol * scale:
            raise SeriesError("h may only contain the monomials 1 and pq")
        if np.abs(c[..., 1:]).max(initial=0.0) > tol * scale:
            raise SeriesError("h must be x-independent")
        d = h.domain
        h0 = FTSeries(c[0, 0, :, :, 0][None], d)
        h1 = FTSeries((c[1, 1, :, :, 0] if h.pqmax >= 2 else np.zeros((1, 1)))[None], d)
        if max(diff(h1, "I").l1(), diff(h1, "y").l1()) > tol * scale:
            raise SeriesError("the pq coefficient of h must be constant")
        return cls(diff(h0, "I"), h1, diff(h0, "y"))

    def for_bracket(self) -> HamFrequencies:
        """Frequencies for which ``D`` equals minus the Poisson action ``{., h}``.

        With ``{p, q} = 1`` one finds ``{phi, h} = -(v d_x + ik omega - (h - j) omega') phi``,
        i.e. the same operator with ``omega'`` negated.
        """
        return HamFrequencies(self.omega, -1 * self.omega_prime, self.v)


def _ham_grid(freq: HamFrequencies, dI: int, dy: int):
    d = freq.domain
    Iu, yu = sp.cheb_nodes(dI + 1), sp.cheb_nodes(dy + 1)
    I, y = np.meshgrid(d.I_base.from_unit(Iu), d.y_base.from_unit(yu), indexing="ij")
    ev = lambda f: np.asarray(evaluate(f, I, y, 0.0, check=False))
    return Iu, yu, ev(freq.omega), ev(freq.omega_prime), ev(freq.v)


def _lambda(kmax: int, pqmax: int, w, wp) -> np.ndarray:
    ks = np.arange(-kmax, kmax + 1).reshape(-1, 1, 1, 1, 1)
    hj = np.arange(pqmax + 1)
    diffhj = (hj[:, None] - hj[None, :]).reshape(1, pqmax + 1, pqmax + 1, 1, 1)
    return 1j * ks * w[None, None, None] + diffhj * wp[None, None, None]


def apply_D_ham(freq: HamFrequencies, phi: HamSeries) -> HamSeries:
    """``sum (v d_x + (h - j) omega' + ik omega) phi_khj e^{ik phi} p^h q^j``."""
    from .series import ham_mul, lift

    d = phi.domain
    vx = ham_mul(lift(freq.v, d), ham_diff(phi, "x"))
    K, P = phi.kmax, phi.pqmax
    ks = np.arange(-K, K + 1)
    hj = np.arange(P + 1)
    rest = None
    for f, weight in (
        (freq.omega, (1j * ks)[:, None, None] * np.ones((1, P + 1, P + 1))),
        (freq.omega_prime, np.ones((2 * K + 1, 1, 1)) * (hj[:, None] - hj[None, :])[None]),
    ):
        if not np.any(f.coeff):
            continue
        scaled = HamSeries(phi.coeff * weight[..., None, None, None], d)
        term = ham_mul(lift(f, d), scaled)
        rest = term if rest is None else rest + term
    return vx if rest is None else vx + rest


def ham_residual(freq: HamFrequencies, phi: HamSeries, g: HamSeries) -> float:
    r = (apply_D_ham(freq, phi) - g).l1()
    z = g.l1()
    return r / z if z > 0 else r


def _ham_auto_degrees(freq: HamFrequencies, dI_in: int, dy_in: int, opts: SolverOptions) -> tuple[int, int]:
    """Output degrees: raised to at least 16 along directions the frequencies depend on."""
    fs = (freq.omega, freq.omega_prime, freq.v)
    scale = max(np.abs(f.coeff).max(initial=0.0) for f in fs)

    def varies(part):
        return np.abs(part).max(initial=0.0) > 1e-13 * scale

    on_I = any(varies(f.coeff[:, 1:, :]) for f in fs)
    on_y = any(varies(f.coeff[:, :, 1:]) for f in fs)
    dI = opts.dI if opts.dI is not None else (max(dI_in, 16) if on_I else dI_in)
    dy = opts.dy if opts.dy is not None else (max(dy_in, 16) if on_y else dy_in)
    return dI, dy


def _x_integration_matrix(x_base, n: int) -> np.ndarray:
    """``(n+1, n)`` map from Chebyshev coefficients of ``psi`` to those of ``int_0^x psi``."""
    t0 = x_base.to_unit(0.0)
    B = np.zeros((n + 1, n))
    for m in range(n):
        e = np.zeros(n)
        e[m] = 1.0
        B[:, m] = C.chebint(e, lbnd=t0, scl=x_base.half_length)
    return B


def solve_ham_homological(
    freq: HamFrequencies, g: HamSeries, opts: SolverOptions = DEFAULT_OPTIONS
) -> HamSeries:
    """Mode-wise solution of ``v phi' + lambda phi = g``, ``phi(0) = 0``, along x.

    At each (I, y) node the coefficients are constant in x, so writing
    ``phi = int_0^x psi`` turns the problem into the banded Chebyshev system
    ``v psi + lambda B psi = g`` (integration formulation, tau-truncated).  The
    result equals ``(1/v) int_0^x g(tau) e^{-lambda (x - tau)/v} d tau`` up to
    the truncation of ``phi`` at x-degree ``max(dx, g.dx + 1)``.
    """
    d = g.domain
    if not d.x_base.lo <= 0.0 <= d.x_base.hi:
        raise SeriesError("the x interval must contain 0")
    K, P = g.kmax, g.pqmax
    dI, dy = _ham_auto_degrees(freq, g.dI, g.dy, opts)
    n = max(opts.dx if opts.dx is not None else max(g.dx, 24), g.dx + 1)
    Iu, yu, w, wp, v = _ham_grid(freq, dI, dy)
    lam = _lambda(K, P, w, wp)  # (2K+1, P+1, P+1, nI, ny)
    VI = sp.cheb_vander(Iu, g.dI)
    Vy = sp.cheb_vander(yu, g.dy)
    gx = np.einsum("khjabc,ia,lb->khjilc", g.coeff, VI, Vy)
    rhs = np.zeros(gx.shape[:-1] + (n,), dtype=complex)
    rhs[..., : g.dx + 1] = gx
    B = _x_integration_matrix(d.x_base, n)
    eye = np.eye(n)
    out = np.zeros(gx.shape[:-1] + (n + 1,), dtype=complex)
    for m in range(2 * K + 1):  # one Fourier mode at a time keeps the batch small
        A = v[None, None, :, :, None, None] * eye + lam[m][..., None, None] * B[:n]
        psi = np.linalg.solve(A, rhs[m][..., None])[..., 0]
        out[m] = psi @ B.T
    c = out
    for ax in (3, 4):
        c = sp.cheb_coeffs(c, ax)
    return HamSeries(c, d)


def kernel_shift_ham(
    freq: HamFrequencies,
    F0: Callable,
    kmax: int,
    pqmax: int,
    dI: int = 0,
    dy: int = 0,
    dx: int = 24,
) -> HamSeries:
    """``F0(I, phi - x omega/v, p e^{-omega' x/v}, q e^{omega' x/v}, y)`` by collocation.

    Annihilated by :func:`apply_D_ham` with the same ``freq``.
    """
    d = freq.domain

    def sampler(I, phi, p, q, y, x):
        Ib, yb = np.broadcast_arrays(I, y)
        w = np.asarray(evaluate(freq.omega, Ib, yb, 0.0, check=False)).real
        wp = np.asarray(evaluate(freq.omega_prime, Ib, yb, 0.0, check=False)).real
        v = np.asarray(evaluate(freq.v, Ib, yb, 0.0, check=False)).real
        s = np.exp(wp * x / v)
        return F0(I, phi - x * w / v, p / s, q * s, y)

    try:
        return make_ham_series(sampler, d, kmax, dI, dy, dx, pqmax)
    except ConstructionError as exc:
        raise DomainEscape(str(exc)) from exc
