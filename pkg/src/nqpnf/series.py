"""Truncated Fourier-Chebyshev series in (I, y, phi) and the Hamiltonian extension.

:class:`FTSeries` stores ``f = sum_k f_k(I, y) e^{ik phi}`` with every ``f_k`` a
tensor Chebyshev expansion over the real base rectangle.  :class:`HamSeries` adds
monomials ``p^h q^j`` (total degree ``h + j <= pqmax``) and a Chebyshev direction
in ``x``.  Series are immutable; every operation returns a new object.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import spectral as sp

log = logging.getLogger(__name__)

FT_KINDS = ("fourier", "cheb", "cheb")
HAM_KINDS = ("fourier", "taylor", "taylor", "cheb", "cheb", "cheb")

#: widths below this are treated as exactly zero (shrink arithmetic roundoff)
WIDTH_EPS = 1e-12


class SeriesError(ValueError):
    pass


class DomainMismatch(SeriesError):
    pass


class ConstructionError(SeriesError):
    pass


class VanishingDenominator(SeriesError):
    pass


class TruncationOverflow(SeriesError):
    def __init__(self, discarded: float):
        super().__init__(f"truncation cap exceeded, discarded mass {discarded:.3e}")
        self.discarded = discarded


class ExtrapolationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise SeriesError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def half_length(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def center(self) -> float:
        return 0.5 * (self.hi + self.lo)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def to_unit(self, x):
        return (np.asarray(x) - self.center) / self.half_length

    def from_unit(self, t):
        return self.center + self.half_length * np.asarray(t)

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x)
        return (x >= self.lo - tol) & (x <= self.hi + tol)


def _width(name: str, value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise SeriesError(f"{name} must be finite")
    if abs(value) < WIDTH_EPS:
        return 0.0
    if value < 0:
        raise SeriesError(f"{name} must be non-negative, got {value}")
    return value


@dataclass(frozen=True)
class DomainSpec:
    """Real base intervals plus complex analyticity widths.

    ``r``, ``sigma``, ``s`` are the widths in I, y and phi; ``xi`` and ``delta``
    (width in x, radius of the (p, q) polydisc) exist only in Hamiltonian mode.
    A width of exactly zero denotes the real domain itself.
    """

    I_base: Interval
    y_base: Interval
    r: float
    sigma: float
    s: float
    x_base: Interval | None = None
    xi: float | None = None
    delta: float | None = None

    def __post_init__(self):
        for name in ("r", "sigma", "s"):
            object.__setattr__(self, name, _width(name, getattr(self, name)))
        ham = [self.x_base is not None, self.xi is not None, self.delta is not None]
        if any(ham) and not all(ham):
            raise SeriesError("x_base, xi and delta must be given together")
        if all(ham):
            object.__setattr__(self, "xi", _width("xi", self.xi))
            object.__setattr__(self, "delta", _width("delta", self.delta))

    @property
    def is_hamiltonian(self) -> bool:
        return self.x_base is not None

    def same_base(self, other: DomainSpec) -> bool:
        return (
            self.I_base == other.I_base
            and self.y_base == other.y_base
            and self.x_base == other.x_base
        )

    def with_widths(self, **widths) -> DomainSpec:
        return replace(self, **widths)

    @property
    def widths(self) -> dict:
        out = {"r": self.r, "sigma": self.sigma, "s": self.s}
        if self.is_hamiltonian:
            out.update(xi=self.xi, delta=self.delta)
        return out

    def to_dict(self) -> dict:
        d = {
            "I": [self.I_base.lo, self.I_base.hi],
            "y": [self.y_base.lo, self.y_base.hi],
            "r": self.r,
            "sigma": self.sigma,
            "s": self.s,
        }
        if self.is_hamiltonian:
            d.update(x=[self.x_base.lo, self.x_base.hi], xi=self.xi, delta=self.delta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DomainSpec:
        x = d.get("x")
        return cls(
            I_base=Interval(*map(float, d["I"])),
            y_base=Interval(*map(float, d["y"])),
            r=d["r"],
            sigma=d["sigma"],
            s=d["s"],
            x_base=Interval(*map(float, x)) if x is not None else None,
            xi=d.get("xi"),
            delta=d.get("delta"),
        )


@dataclass(frozen=True)
class TruncationPolicy:
    """Hard caps applied to products; ``strict`` turns any discarded mass into an error."""

    kmax: int = 64
    dI: int = 96
    dy: int = 96
    dx: int = 96
    pqmax: int | None = None
    strict: bool = False
    strict_tol: float = 1e-15


DEFAULT_POLICY = TruncationPolicy()

#: total (p, q) degree cap used when a policy leaves ``pqmax`` unset
PQ_HARD_CAP = 16


# ---------------------------------------------------------------------------
# generic coefficient-array helpers
# ---------------------------------------------------------------------------


def _support(c: np.ndarray, kinds: Sequence[str]) -> tuple[int, ...]:
    """Per-axis extent actually used (K for Fourier, degree for others)."""
    nz = np.abs(c) > 0
    out = []
    for ax, kind in enumerate(kinds):
        other = tuple(i for i in range(c.ndim) if i != ax)
        used = np.nonzero(nz.any(axis=other))[0]
        if kind == "fourier":
            K = (c.shape[ax] - 1) // 2
            out.append(int(np.max(np.abs(used - K))) if used.size else 0)
        else:
            out.append(int(used.max()) if used.size else 0)
    return tuple(out)


def _resize(c: np.ndarray, kinds: Sequence[str], extents: Sequence[int]) -> np.ndarray:
    """Pad or cut each axis to the given extent (K or degree)."""
    for ax, (kind, e) in enumerate(zip(kinds, extents)):
        n = c.shape[ax]
        if kind == "fourier":
            K = (n - 1) // 2
            if e < K:
                sl = [slice(None)] * c.ndim
                sl[ax] = slice(K - e, K + e + 1)
                c = c[tuple(sl)]
            elif e > K:
                pad = [(0, 0)] * c.ndim
                pad[ax] = (e - K, e - K)
                c = np.pad(c, pad)
        else:
            if e + 1 < n:
                sl = [slice(None)] * c.ndim
                sl[ax] = slice(0, e + 1)
                c = c[tuple(sl)]
            elif e + 1 > n:
                pad = [(0, 0)] * c.ndim
                pad[ax] = (0, e + 1 - n)
                c = np.pad(c, pad)
    return c


def _extents(c: np.ndarray, kinds: Sequence[str]) -> tuple[int, ...]:
    return tuple((n - 1) // 2 if k == "fourier" else n - 1 for n, k in zip(c.shape, kinds))


def _to_grid(c: np.ndarray, kinds, grid) -> np.ndarray:
    v = c.astype(complex)
    for ax, (kind, m) in enumerate(zip(kinds, grid)):
        if kind == "fourier":
            v = sp.fourier_values(v, m, ax)
        elif kind == "cheb":
            v = sp.cheb_values(v, m, ax)
        else:
            v = sp.taylor_values(v, m, ax)
    return v


def _from_grid(v: np.ndarray, kinds, extents) -> np.ndarray:
    for ax, (kind, e) in enumerate(zip(kinds, extents)):
        if kind == "fourier":
            v = sp.fourier_coeffs(v, e, ax)
        elif kind == "cheb":
            v = sp.cheb_coeffs(v, ax)[tuple([slice(None)] * ax + [slice(0, e + 1)])]
        else:
            v = sp.taylor_coeffs(v, e, ax)
    return v


def _grid_size(kind: str, e: int) -> int:
    return 2 * e + 1 if kind == "fourier" else e + 1


def _spectral_product(a: np.ndarray, b: np.ndarray, kinds) -> np.ndarray:
    """Exact product of two coefficient arrays (output extents = sums of supports)."""
    sa, sb = _support(a, kinds), _support(b, kinds)
    a = _resize(a, kinds, sa)
    b = _resize(b, kinds, sb)
    out_ext = tuple(x + y for x, y in zip(sa, sb))
    grid = tuple(_grid_size(k, e) for k, e in zip(kinds, out_ext))
    vals = _to_grid(a, kinds, grid) * _to_grid(b, kinds, grid)
    return _from_grid(vals, kinds, out_ext)


def _pq_mask(pqmax: int) -> np.ndarray:
    h = np.arange(pqmax + 1)
    return (h[:, None] + h[None, :]) <= pqmax


def _truncate(c: np.ndarray, kinds, caps) -> tuple[np.ndarray, float]:
    """Cut ``c`` to ``caps``; return the cut array and the l1 mass removed."""
    total = float(np.abs(c).sum())
    cut = _resize(c, kinds, [min(e, cap) for e, cap in zip(_extents(c, kinds), caps)])
    return cut, max(total - float(np.abs(cut).sum()), 0.0)


def _check_overflow(mass: float, result: np.ndarray, policy: TruncationPolicy):
    if policy.strict and mass > policy.strict_tol * max(float(np.abs(result).sum()), 1.0):
        raise TruncationOverflow(mass)


def _freeze(c: np.ndarray) -> np.ndarray:
    c = np.array(c, dtype=complex)
    c.setflags(write=False)
    return c


def _is_conj_symmetric(c: np.ndarray, tol: float = 1e-13) -> bool:
    mirrored = np.conj(c[::-1])
    scale = max(float(np.abs(c).max(initial=0.0)), 1e-300)
    return bool(np.abs(mirrored - c).max(initial=0.0) <= tol * scale)


def _fmt(x: float) -> float:
    # 17 significant digits round-trips IEEE doubles exactly
    return float(format(float(x), ".17g"))


# ---------------------------------------------------------------------------
# FTSeries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FTSeries:
    """Truncated series ``sum_k f_k(I, y) e^{ik phi}``.

    ``coeff[k + kmax, a, b]`` multiplies ``e^{ik phi} T_a(I~) T_b(y~)`` where ``I~``
    and ``y~`` are the base intervals mapped onto [-1, 1].  ``discarded`` is the l1
    coefficient mass dropped by truncation while building this series.
    """

    coeff: np.ndarray
    domain: DomainSpec
    discarded: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeff)
        if c.ndim != 3 or c.shape[0] % 2 == 0:
            raise SeriesError(f"bad FTSeries coefficient shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise SeriesError("non-finite coefficient")
        object.__setattr__(self, "coeff", _freeze(c))

    # shape -----------------------------------------------------------------
    @property
    def kmax(self) -> int:
        return (self.coeff.shape[0] - 1) // 2

    @property
    def dI(self) -> int:
        return self.coeff.shape[1] - 1

    @property
    def dy(self) -> int:
        return self.coeff.shape[2] - 1

    @property
    def cutoffs(self) -> tuple[int, int, int]:
        return self.kmax, self.dI, self.dy

    @property
    def is_real(self) -> bool:
        return _is_conj_symmetric(self.coeff)

    def mode(self, k: int) -> np.ndarray:
        """Chebyshev coefficients of ``f_k`` (zeros if ``|k| > kmax``)."""
        if abs(k) > self.kmax:
            return np.zeros(self.coeff.shape[1:], dtype=complex)
        return self.coeff[k + self.kmax]

    def resized(self, kmax: int, dI: int, dy: int) -> FTSeries:
        return FTSeries(_resize(self.coeff, FT_KINDS, (kmax, dI, dy)), self.domain, self.discarded)

    def l1(self) -> float:
        return float(np.abs(self.coeff).sum())

    # arithmetic sugar --------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, FTSeries):
            return add(self, other)
        return add(self, constant(other, self.domain))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1)

    def __sub__(self, other):
        return self + (-other if isinstance(other, FTSeries) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FTSeries):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __call__(self, I, y, phi, check: bool = True):
        return evaluate(self, I, y, phi, check=check)

    def to_dict(self) -> dict:
        K = self.kmax
        idx = np.argwhere(self.coeff != 0)
        return {
            "kind": "FTSeries",
            "domain": self.domain.to_dict(),
            "cutoffs": {"kmax": K, "dI": self.dI, "dy": self.dy},
            "discarded": _fmt(self.discarded),
            "coeff": [
                [int(i - K), int(a), int(b), _fmt(self.coeff[i, a, b].real), _fmt(self.coeff[i, a, b].imag)]
                for i, a, b in idx
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FTSeries:
        if d.get("kind") != "FTSeries":
            raise SeriesError(f"expected kind FTSeries, got {d.get('kind')!r}")
        cut = d["cutoffs"]
        K = int(cut["kmax"])
        c = np.zeros((2 * K + 1, int(cut["dI"]) + 1, int(cut["dy"]) + 1), dtype=complex)
        for k, a, b, re, im in d["coeff"]:
            c[int(k) + K, int(a), int(b)] = complex(float(re), float(im))
        return cls(c, DomainSpec.from_dict(d["domain"]), float(d.get("discarded", 0.0)))


def zeros(domain: DomainSpec, kmax: int = 0, dI: int = 0, dy: int = 0) -> FTSeries:
    return FTSeries(np.zeros((2 * kmax + 1, dI + 1, dy + 1), dtype=complex), domain)


def constant(value, domain: DomainSpec) -> FTSeries:
    return FTSeries(np.full((1, 1, 1), complex(value)), domain)


def fourier_mode(k: int, domain: DomainSpec, amplitude=1.0) -> FTSeries:
    K = abs(k)
    c = np.zeros((2 * K + 1, 1, 1), dtype=complex)
    c[k + K, 0, 0] = amplitude
    return FTSeries(c, domain)


def _check_same(f, g):
    if not f.domain.same_base(g.domain):
        raise DomainMismatch("series live on different base domains")


def make_series(
    sampler: Callable, domain: DomainSpec, kmax: int, dI: int, dy: int
) -> FTSeries:
    """Interpolate ``sampler(I, y, phi)`` on the (2kmax+1) x (dI+1) x (dy+1) tensor grid.

    Exact for trigonometric polynomials times polynomials within the cutoffs.
    The sampler receives broadcastable arrays of shape ``(nphi, nI, ny)``.
    """
    if min(kmax, dI, dy) < 0:
        raise SeriesError("cutoffs must be non-negative")
    phi = sp.fourier_nodes(2 * kmax + 1)[:, None, None]
    I = domain.I_base.from_unit(sp.cheb_nodes(dI + 1))[None, :, None]
    y = domain.y_base.from_unit(sp.cheb_nodes(dy + 1))[None, None, :]
    vals = np.broadcast_to(np.asarray(sampler(I, y, phi), dtype=complex), (phi.size, I.size, y.size))
    bad = ~np.isfinite(vals)
    if bad.any():
        m, a, b = np.argwhere(bad)[0]
        raise ConstructionError(
            f"non-finite sample at node I={I.flat[a]:.17g}, y={y.flat[b]:.17g}, phi={phi.flat[m]:.17g}"
        )
    c = sp.fourier_coeffs(vals, kmax, 0)
    c = sp.cheb_coeffs(c, 1)
    c = sp.cheb_coeffs(c, 2)
    return FTSeries(c, domain)


def add(f: FTSeries, g: FTSeries) -> FTSeries:
    _check_same(f, g)
    ext = tuple(max(a, b) for a, b in zip(f.cutoffs, g.cutoffs))
    c = _resize(f.coeff, FT_KINDS, ext) + _resize(g.coeff, FT_KINDS, ext)
    return FTSeries(c, f.domain, f.discarded + g.discarded)


def scale(f: FTSeries, c) -> FTSeries:
    return FTSeries(f.coeff * complex(c), f.domain, abs(complex(c)) * f.discarded)


def mul(f: FTSeries, g: FTSeries, policy: TruncationPolicy = DEFAULT_POLICY) -> FTSeries:
    """Product with cutoffs ``kmax_f + kmax_g`` etc., cut at the policy caps."""
    _check_same(f, g)
    prod = _spectral_product(f.coeff, g.coeff, FT_KINDS)
    nominal = tuple(a + b for a, b in zip(f.cutoffs, g.cutoffs))
    caps = (policy.kmax, policy.dI, policy.dy)
    prod = _resize(prod, FT_KINDS, [max(e, n) for e, n in zip(_extents(prod, FT_KINDS), nominal)])
    cut, mass = _truncate(prod, FT_KINDS, [min(n, cap) for n, cap in zip(nominal, caps)])
    _check_overflow(mass, cut, policy)
    return FTSeries(cut, f.domain, f.discarded + g.discarded + mass)


_DIRECTIONS = {"I": 1, "y": 2, "phi": 0}


def diff(f: FTSeries, direction: str) -> FTSeries:
    """Exact derivative of the truncated representation along I, y or phi."""
    if direction == "phi":
        k = np.arange(-f.kmax, f.kmax + 1)
        return FTSeries(f.coeff * (1j * k)[:, None, None], f.domain)
    if direction == "I":
        return FTSeries(sp.cheb_diff(f.coeff, 1, 1 / f.domain.I_base.half_length), f.domain)
    if direction == "y":
        return FTSeries(sp.cheb_diff(f.coeff, 2, 1 / f.domain.y_base.half_length), f.domain)
    raise SeriesError(f"unknown direction {direction!r}")


def antiderivative(f: FTSeries, direction: str) -> FTSeries:
    """Chebyshev antiderivative along I or y, vanishing at the lower end of the base interval."""
    if direction == "I":
        c = sp.cheb_integ(f.coeff, 1, f.domain.I_base.half_length)
    elif direction == "y":
        c = sp.cheb_integ(f.coeff, 2, f.domain.y_base.half_length)
    else:
        raise SeriesError("antiderivative only along I or y")
    return FTSeries(c, f.domain)


def _warn_outside(interval: Interval, x, name):
    x = np.asarray(x)
    if np.iscomplexobj(x) or not np.all(interval.contains(x, 1e-12 * interval.length)):
        warnings.warn(f"evaluating outside the real base interval in {name}", ExtrapolationWarning, stacklevel=3)


def evaluate(f: FTSeries, I, y, phi, check: bool = True):
    """Evaluate at (possibly complex, broadcastable) points."""
    if check:
        _warn_outside(f.domain.I_base, I, "I")
        _warn_outside(f.domain.y_base, y, "y")
    I, y, phi = np.broadcast_arrays(np.asarray(I), np.asarray(y), np.asarray(phi))
    VI = sp.cheb_vander(f.domain.I_base.to_unit(I), f.dI)
    Vy = sp.cheb_vander(f.domain.y_base.to_unit(y), f.dy)
    k = np.arange(-f.kmax, f.kmax + 1)
    E = np.exp(1j * phi[..., None] * k)
    out = np.einsum("kab,...k,...a,...b->...", f.coeff, E, VI, Vy, optimize=True)
    return out[()] if out.ndim == 0 else out


def project_mean(f: FTSeries) -> FTSeries:
    return FTSeries(f.coeff[f.kmax : f.kmax + 1], f.domain)


def project_osc(f: FTSeries) -> FTSeries:
    c = np.array(f.coeff)
    c[f.kmax] = 0
    return FTSeries(c, f.domain)


def is_phi_independent(f: FTSeries) -> bool:
    c = np.array(f.coeff)
    c[f.kmax] = 0
    return not np.any(c)


def _default_recip_degree(d_eff: int, floor: int) -> int:
    return 0 if d_eff == 0 else max(floor, 2 * d_eff)


def reciprocal(
    f: FTSeries,
    degrees: tuple[int, int] | None = None,
    floor: float = 1e-10,
    return_residual: bool = False,
):
    """Collocation interpolant of ``1/f`` for phi-independent ``f``.

    Raises :class:`VanishingDenominator` when ``|f|`` drops below ``floor`` on the
    grid, or when a real-valued ``f`` changes sign between adjacent nodes.
    """
    if not is_phi_independent(f):
        raise SeriesError("reciprocal needs a phi-independent series")
    _, sI, sy = _support(f.coeff, FT_KINDS)
    if degrees is None:
        degrees = (_default_recip_degree(sI, 16), _default_recip_degree(sy, 32))
    dI, dy = degrees
    # sample on a grid at least as fine as f itself for the sign-change test
    nI, ny = max(dI, sI) + 1, max(dy, sy) + 1
    mean = _resize(project_mean(f).coeff, FT_KINDS, (0, nI - 1, ny - 1))[0]
    vals = sp.cheb_values(sp.cheb_values(mean, nI, 0), ny, 1)
    _check_nonvanishing(vals, floor)
    if (nI, ny) != (dI + 1, dy + 1):
        vals = sp.cheb_values(sp.cheb_values(mean, dI + 1, 0), dy + 1, 1)
    inv = sp.cheb_coeffs(sp.cheb_coeffs(1.0 / vals, 0), 1)
    g = FTSeries(inv[None], f.domain)
    if not return_residual:
        return g
    res = (mul(f, g) - 1.0).l1()
    log.debug("reciprocal residual %.3e", res)
    return g, res


def _check_nonvanishing(vals: np.ndarray, floor: float):
    mod = np.abs(vals)
    if mod.min() < floor:
        raise VanishingDenominator(f"denominator modulus {mod.min():.3e} below floor {floor:g}")
    scale = mod.max()
    if np.abs(vals.imag).max() <= 1e-12 * scale:
        re = vals.real
        for ax in range(re.ndim):
            s = np.sign(re)
            if np.any(np.diff(s, axis=ax) != 0):
                raise VanishingDenominator("real denominator changes sign on the base domain")


# ---------------------------------------------------------------------------
# HamSeries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HamSeries:
    """Truncated ``sum phi_khj(I, y, x) e^{ik phi} p^h q^j`` with ``h + j <= pqmax``.

    ``coeff[k + kmax, h, j, a, b, c]`` multiplies ``e^{ik phi} p^h q^j T_a T_b T_c``.
    """

    coeff: np.ndarray
    domain: DomainSpec
    discarded: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeff, dtype=complex)
        if c.ndim != 6 or c.shape[0] % 2 == 0 or c.shape[1] != c.shape[2]:
            raise SeriesError(f"bad HamSeries coefficient shape {c.shape}")
        if not self.domain.is_hamiltonian:
            raise SeriesError("HamSeries needs a Hamiltonian DomainSpec")
        if not np.all(np.isfinite(c)):
            raise SeriesError("non-finite coefficient")
        c[:, ~_pq_mask(c.shape[1] - 1)] = 0
        object.__setattr__(self, "coeff", _freeze(c))

    @property
    def kmax(self) -> int:
        return (self.coeff.shape[0] - 1) // 2

    @property
    def pqmax(self) -> int:
        return self.coeff.shape[1] - 1

    @property
    def dI(self) -> int:
        return self.coeff.shape[3] - 1

    @property
    def dy(self) -> int:
        return self.coeff.shape[4] - 1

    @property
    def dx(self) -> int:
        return self.coeff.shape[5] - 1

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return self.kmax, self.pqmax, self.pqmax, self.dI, self.dy, self.dx

    @property
    def is_real(self) -> bool:
        return _is_conj_symmetric(self.coeff)

    def resized(self, kmax, pqmax, dI, dy, dx) -> HamSeries:
        return HamSeries(_resize(self.coeff, HAM_KINDS, (kmax, pqmax, pqmax, dI, dy, dx)), self.domain, self.discarded)

    def l1(self) -> float:
        return float(np.abs(self.coeff).sum())

    def __add__(self, other):
        if isinstance(other, HamSeries):
            return ham_add(self, other)
        return ham_add(self, ham_constant(other, self.domain))

    __radd__ = __add__

    def __neg__(self):
        return ham_scale(self, -1)

    def __sub__(self, other):
        return self + (-other if isinstance(other, HamSeries) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, HamSeries):
            return ham_mul(self, other)
        return ham_scale(self, other)

    __rmul__ = __mul__

    def __call__(self, I, phi, p, q, y, x, check: bool = True):
        return ham_evaluate(self, I, phi, p, q, y, x, check=check)

    def to_dict(self) -> dict:
        K = self.kmax
        idx = np.argwhere(self.coeff != 0)
        return {
            "kind": "HamSeries",
            "domain": self.domain.to_dict(),
            "cutoffs": {"kmax": K, "pqmax": self.pqmax, "dI": self.dI, "dy": self.dy, "dx": self.dx},
            "discarded": _fmt(self.discarded),
            "coeff": [
                [int(i - K), int(a), int(b), int(h), int(j), int(cx),
                 _fmt(self.coeff[i, h, j, a, b, cx].real), _fmt(self.coeff[i, h, j, a, b, cx].imag)]
                for i, h, j, a, b, cx in idx
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> HamSeries:
        if d.get("kind") != "HamSeries":
            raise SeriesError(f"expected kind HamSeries, got {d.get('kind')!r}")
        cut = d["cutoffs"]
        K, P = int(cut["kmax"]), int(cut["pqmax"])
        c = np.zeros((2 * K + 1, P + 1, P + 1, int(cut["dI"]) + 1, int(cut["dy"]) + 1, int(cut["dx"]) + 1), dtype=complex)
        for k, a, b, h, j, cx, re, im in d["coeff"]:
            c[int(k) + K, int(h), int(j), int(a), int(b), int(cx)] = complex(float(re), float(im))
        return cls(c, DomainSpec.from_dict(d["domain"]), float(d.get("discarded", 0.0)))


def ham_zeros(domain: DomainSpec) -> HamSeries:
    return HamSeries(np.zeros((1, 1, 1, 1, 1, 1), dtype=complex), domain)


def ham_constant(value, domain: DomainSpec) -> HamSeries:
    return HamSeries(np.full((1, 1, 1, 1, 1, 1), complex(value)), domain)


def ham_monomial(domain: DomainSpec, k: int = 0, h: int = 0, j: int = 0, amplitude=1.0) -> HamSeries:
    """``amplitude * e^{ik phi} p^h q^j``."""
    K, P = abs(k), h + j
    c = np.zeros((2 * K + 1, P + 1, P + 1, 1, 1, 1), dtype=complex)
    c[k + K, h, j, 0, 0, 0] = amplitude
    return HamSeries(c, domain)


def lift(f: FTSeries, domain: DomainSpec | None = None) -> HamSeries:
    """Embed an (I, y, phi) series as an x-, p-, q-independent HamSeries."""
    domain = domain or f.domain
    if not domain.is_hamiltonian:
        raise SeriesError("lift target must be a Hamiltonian domain")
    if (domain.I_base, domain.y_base) != (f.domain.I_base, f.domain.y_base):
        raise DomainMismatch("lift target must share I and y base intervals")
    c = f.coeff[:, None, None, :, :, None]
    return HamSeries(c, domain, f.discarded)


def make_ham_series(
    sampler: Callable,
    domain: DomainSpec,
    kmax: int,
    dI: int,
    dy: int,
    dx: int,
    pqmax: int,
    pq_nodes: int | None = None,
) -> HamSeries:
    """Interpolate ``sampler(I, phi, p, q, y, x)``.

    Chebyshev collocation in I, y, x; equispaced in phi; Taylor coefficients in
    (p, q) from ``pq_nodes`` points on the unit circles.
    """
    if not domain.is_hamiltonian:
        raise SeriesError("make_ham_series needs a Hamiltonian DomainSpec")
    M = pq_nodes or 2 * (pqmax + 1)
    phi = sp.fourier_nodes(2 * kmax + 1).reshape(-1, 1, 1, 1, 1, 1)
    z = np.exp(2j * np.pi * np.arange(M) / M)
    p = z.reshape(1, -1, 1, 1, 1, 1)
    q = z.reshape(1, 1, -1, 1, 1, 1)
    I = domain.I_base.from_unit(sp.cheb_nodes(dI + 1)).reshape(1, 1, 1, -1, 1, 1)
    y = domain.y_base.from_unit(sp.cheb_nodes(dy + 1)).reshape(1, 1, 1, 1, -1, 1)
    x = domain.x_base.from_unit(sp.cheb_nodes(dx + 1)).reshape(1, 1, 1, 1, 1, -1)
    shape = (2 * kmax + 1, M, M, dI + 1, dy + 1, dx + 1)
    vals = np.broadcast_to(np.asarray(sampler(I, phi, p, q, y, x), dtype=complex), shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        m, a, b, i, jy, ix = np.argwhere(bad)[0]
        raise ConstructionError(
            f"non-finite sample at node I={I.flat[i]:.17g}, y={y.flat[jy]:.17g}, x={x.flat[ix]:.17g}, "
            f"phi={phi.flat[m]:.17g}, p={p.flat[a]:.6g}, q={q.flat[b]:.6g}"
        )
    c = sp.fourier_coeffs(vals, kmax, 0)
    c = sp.taylor_coeffs(c, pqmax, 1)
    c = sp.taylor_coeffs(c, pqmax, 2)
    for ax in (3, 4, 5):
        c = sp.cheb_coeffs(c, ax)
    return HamSeries(c, domain)


def _check_same_ham(f, g):
    if not f.domain.same_base(g.domain):
        raise DomainMismatch("series live on different base domains")


def ham_add(f: HamSeries, g: HamSeries) -> HamSeries:
    _check_same_ham(f, g)
    ext = tuple(max(a, b) for a, b in zip(f.cutoffs, g.cutoffs))
    c = _resize(f.coeff, HAM_KINDS, ext) + _resize(g.coeff, HAM_KINDS, ext)
    return HamSeries(c, f.domain, f.discarded + g.discarded)


def ham_scale(f: HamSeries, c) -> HamSeries:
    return HamSeries(f.coeff * complex(c), f.domain, abs(complex(c)) * f.discarded)


def ham_mul(f: HamSeries, g: HamSeries, policy: TruncationPolicy = DEFAULT_POLICY) -> HamSeries:
    _check_same_ham(f, g)
    prod = _spectral_product(f.coeff, g.coeff, HAM_KINDS)
    nominal = [a + b for a, b in zip(f.cutoffs, g.cutoffs)]
    pq_cap = policy.pqmax if policy.pqmax is not None else PQ_HARD_CAP
    caps = (policy.kmax, pq_cap, pq_cap, policy.dI, policy.dy, policy.dx)
    prod = _resize(prod, HAM_KINDS, [max(e, n) for e, n in zip(_extents(prod, HAM_KINDS), nominal)])
    cut, mass = _truncate(prod, HAM_KINDS, [min(n, cap) for n, cap in zip(nominal, caps)])
    P = cut.shape[1] - 1
    mask = _pq_mask(P)
    mass += float(np.abs(cut[:, ~mask]).sum())
    _check_overflow(mass, cut, policy)
    return HamSeries(cut, f.domain, f.discarded + g.discarded + mass)


_HAM_AXES = {"phi": 0, "p": 1, "q": 2, "I": 3, "y": 4, "x": 5}


def ham_diff(f: HamSeries, direction: str) -> HamSeries:
    c = f.coeff
    if direction == "phi":
        k = np.arange(-f.kmax, f.kmax + 1)
        return HamSeries(c * (1j * k).reshape(-1, 1, 1, 1, 1, 1), f.domain)
    if direction in ("p", "q"):
        ax = _HAM_AXES[direction]
        n = np.arange(c.shape[ax]).reshape([-1 if i == ax else 1 for i in range(6)])
        d = c * n
        d = np.roll(d, -1, axis=ax)
        sl = [slice(None)] * 6
        sl[ax] = -1
        d[tuple(sl)] = 0
        P = max(f.pqmax - 1, 0)  # total degree drops by one
        return HamSeries(np.ascontiguousarray(d[:, : P + 1, : P + 1]), f.domain)
    if direction == "I":
        return HamSeries(sp.cheb_diff(c, 3, 1 / f.domain.I_base.half_length), f.domain)
    if direction == "y":
        return HamSeries(sp.cheb_diff(c, 4, 1 / f.domain.y_base.half_length), f.domain)
    if direction == "x":
        return HamSeries(sp.cheb_diff(c, 5, 1 / f.domain.x_base.half_length), f.domain)
    raise SeriesError(f"unknown direction {direction!r}")


def ham_evaluate(f: HamSeries, I, phi, p, q, y, x, check: bool = True):
    d = f.domain
    if check:
        _warn_outside(d.I_base, I, "I")
        _warn_outside(d.y_base, y, "y")
        _warn_outside(d.x_base, x, "x")
    I, phi, p, q, y, x = np.broadcast_arrays(*map(np.asarray, (I, phi, p, q, y, x)))
    k = np.arange(-f.kmax, f.kmax + 1)
    E = np.exp(1j * phi[..., None] * k)
    n = np.arange(f.pqmax + 1)
    Pp = p[..., None].astype(complex) ** n
    Pq = q[..., None].astype(complex) ** n
    VI = sp.cheb_vander(d.I_base.to_unit(I), f.dI)
    Vy = sp.cheb_vander(d.y_base.to_unit(y), f.dy)
    Vx = sp.cheb_vander(d.x_base.to_unit(x), f.dx)
    out = np.einsum("khjabc,...k,...h,...j,...a,...b,...c->...", f.coeff, E, Pp, Pq, VI, Vy, Vx, optimize=True)
    return out[()] if out.ndim == 0 else out


def project_bar(f: HamSeries) -> HamSeries:
    """Keep ``k = 0, h = j`` (functions of I, y, x and pq only)."""
    c = np.zeros_like(f.coeff)
    K = f.kmax
    diag = np.arange(f.pqmax + 1)
    c[K, diag, diag] = f.coeff[K, diag, diag]
    return HamSeries(c, f.domain)


def project_tilde(f: HamSeries) -> HamSeries:
    """Keep ``(k, h - j) != (0, 0)``."""
    return HamSeries(f.coeff - project_bar(f).coeff, f.domain)


def ham_is_phi_independent(f: HamSeries) -> bool:
    c = np.array(f.coeff)
    c[f.kmax] = 0
    return not np.any(c)


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorField3:
    """Components on the I, y and phi directions; padded to common cutoffs."""

    X1: FTSeries
    X2: FTSeries
    X3: FTSeries

    def __post_init__(self):
        comps = (self.X1, self.X2, self.X3)
        for c in comps[1:]:
            _check_same(comps[0], c)
        ext = tuple(max(c.cutoffs[i] for c in comps) for i in range(3))
        for name, c in zip(("X1", "X2", "X3"), comps):
            if c.cutoffs != ext:
                object.__setattr__(self, name, c.resized(*ext))

    @property
    def components(self) -> tuple[FTSeries, FTSeries, FTSeries]:
        return self.X1, self.X2, self.X3

    @property
    def domain(self) -> DomainSpec:
        return self.X1.domain

    @property
    def cutoffs(self):
        return self.X1.cutoffs

    @property
    def discarded(self) -> float:
        return sum(c.discarded for c in self.components)

    def l1(self) -> float:
        return sum(c.l1() for c in self.components)

    def map(self, fn) -> VectorField3:
        return VectorField3(*(fn(c) for c in self.components))

    def __add__(self, other: VectorField3) -> VectorField3:
        return VectorField3(*(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: VectorField3) -> VectorField3:
        return VectorField3(*(a - b for a, b in zip(self.components, other.components)))

    def __neg__(self):
        return self.map(lambda c: -c)

    def __mul__(self, c) -> VectorField3:
        return self.map(lambda x: scale(x, c))

    __rmul__ = __mul__

    def __call__(self, I, y, phi, check: bool = True) -> np.ndarray:
        return np.stack([evaluate(c, I, y, phi, check=check) for c in self.components])

    def to_dict(self) -> dict:
        return {"kind": "VectorField3", "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> VectorField3:
        return cls(*(FTSeries.from_dict(c) for c in d["components"]))


def vf_zeros(domain: DomainSpec) -> VectorField3:
    z = zeros(domain)
    return VectorField3(z, z, z)


def vf_mean(X: VectorField3) -> VectorField3:
    return X.map(project_mean)


def vf_osc(X: VectorField3) -> VectorField3:
    return X.map(project_osc)


# ---------------------------------------------------------------------------
# noise control
# ---------------------------------------------------------------------------


def _chop_array(c: np.ndarray, kinds, rel_tol: float) -> tuple[np.ndarray, float]:
    scale = float(np.abs(c).max(initial=0.0))
    if scale == 0:
        return c, 0.0
    small = np.abs(c) < rel_tol * scale
    mass = float(np.abs(c[small]).sum())
    out = np.where(small, 0, c)
    ext = list(_support(out, kinds))
    if kinds == HAM_KINDS:
        nz = np.argwhere(np.abs(out) > 0)
        P = int((nz[:, 1] + nz[:, 2]).max()) if nz.size else 0
        ext[1] = ext[2] = P
    return _resize(out, kinds, ext), mass


def chop(f, rel_tol: float = 1e-15):
    """Zero coefficients below ``rel_tol * max|c|`` and trim the cutoffs to the support.

    Works on FTSeries, HamSeries and VectorField3; removed mass is added to ``discarded``.
    Bernstein-weighted norms amplify degree-n roundoff by ``rho^n``, so dropping
    product noise keeps norm bounds meaningful.
    """
    if isinstance(f, VectorField3):
        return VectorField3(*(chop(c, rel_tol) for c in f.components))
    if isinstance(f, HamSeries):
        c, mass = _chop_array(np.asarray(f.coeff), HAM_KINDS, rel_tol)
        return HamSeries(c, f.domain, f.discarded + mass)
    c, mass = _chop_array(np.asarray(f.coeff), FT_KINDS, rel_tol)
    return FTSeries(c, f.domain, f.discarded + mass)
