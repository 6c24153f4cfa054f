"""Lie and Poisson brackets, truncated Lie series and flow-map oracles.

Conventions
-----------
Vector fields act on states ordered ``(I, y, phi)``.  ``[Y, X] = J_X Y - J_Y X``
and ``L_Y = [Y, .]``; with this choice ``e^{L_Y} X`` is the pull-back of ``X`` by
the time-one map ``Phi`` of ``Y``, ``Z(z) = DPhi(z)^{-1} X(Phi(z))``, so that
``Phi(flow_T^Z(z)) = flow_T^X(Phi(z))``.

Hamiltonian states are ordered ``(I, phi, p, q, y, x)``; the conjugate pairs are
``(I, phi)``, ``(p, q)``, ``(y, x)`` with ``{p, q} = 1``.  The flow of a generator
``g`` satisfies ``d/dt F(flow_t) = {g, F}(flow_t)``, hence ``e^{L_g} H = H o flow_1^g``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .norms import Weights, ham_norm, vf_norm
from .series import (
    DEFAULT_POLICY,
    FTSeries,
    HamSeries,
    SeriesError,
    TruncationPolicy,
    VectorField3,
    diff,
    evaluate,
    ham_diff,
    ham_evaluate,
    ham_mul,
    mul,
)

Generator = Union[VectorField3, HamSeries]

VF_DIRECTIONS = ("I", "y", "phi")


class DivergenceRisk(SeriesError):
    def __init__(self, q: float, q_limit: float):
        super().__init__(f"Lie series contraction q = {q:.4g} not below limit {q_limit:g}")
        self.q = q
        self.q_limit = q_limit


class FlowEscape(SeriesError):
    def __init__(self, time: float, count: int = 1):
        super().__init__(f"trajectory left the real domain at t = {time:.6g} ({count} samples)")
        self.time = time
        self.count = count


# ---------------------------------------------------------------------------
# brackets
# ---------------------------------------------------------------------------


def _jac_apply(X: VectorField3, Y: VectorField3, policy) -> list[FTSeries]:
    """Components of ``J_X Y``: ``sum_j d_j X_i Y_j``."""
    out = []
    for Xi in X.components:
        acc = None
        for dirn, Yj in zip(VF_DIRECTIONS, Y.components):
            if not np.any(Yj.coeff):
                continue
            dXi = diff(Xi, dirn)
            if not np.any(dXi.coeff):
                continue
            term = mul(dXi, Yj, policy)
            acc = term if acc is None else acc + term
        out.append(acc if acc is not None else 0 * Xi)
    return out


def lie_bracket(Y: VectorField3, X: VectorField3, policy: TruncationPolicy = DEFAULT_POLICY) -> VectorField3:
    """``[Y, X] = J_X Y - J_Y X``."""
    a = _jac_apply(X, Y, policy)
    b = _jac_apply(Y, X, policy)
    return VectorField3(*(ai - bi for ai, bi in zip(a, b)))


_PAIRS = (("I", "phi"), ("p", "q"), ("y", "x"))


def poisson_bracket(f: HamSeries, g: HamSeries, policy: TruncationPolicy = DEFAULT_POLICY) -> HamSeries:
    """``{f, g} = sum over pairs (a, b) of d_a f d_b g - d_b f d_a g``; ``{p, q} = 1``."""
    acc = None
    for a, b in _PAIRS:
        for s, (u, w) in ((1, (a, b)), (-1, (b, a))):
            fu = ham_diff(f, u)
            if not np.any(fu.coeff):
                continue
            gw = ham_diff(g, w)
            if not np.any(gw.coeff):
                continue
            term = ham_mul(fu, gw, policy)
            term = term if s > 0 else -term
            acc = term if acc is None else acc + term
    if acc is None:
        return 0 * f
    return acc


def bracket(Y: Generator, W: Generator, policy: TruncationPolicy = DEFAULT_POLICY) -> Generator:
    if isinstance(Y, VectorField3) and isinstance(W, VectorField3):
        return lie_bracket(Y, W, policy)
    if isinstance(Y, HamSeries) and isinstance(W, HamSeries):
        return poisson_bracket(Y, W, policy)
    raise SeriesError("generator and target must both be vector fields or both Hamiltonians")


# ---------------------------------------------------------------------------
# Lie series
# ---------------------------------------------------------------------------


@dataclass
class LieSeriesResult:
    """``transformed`` = partial sum; ``tail_bound = q^{K+1}/(1-q) |W|`` (inf if q >= 1)."""

    transformed: Generator
    terms_used: int
    q: float
    tail_bound: float
    truncation_error_estimate: float
    term_norms: list

    @property
    def convergent(self) -> bool:
        return self.q < 1.0

    def summary(self) -> dict:
        return {
            "terms_used": self.terms_used,
            "q": self.q,
            "tail_bound": self.tail_bound,
            "truncation_error_estimate": self.truncation_error_estimate,
        }


def contraction_q(
    Y: Generator,
    weights: Weights | None = None,
    domain=None,
    d: float | None = None,
    cbar: float = 8.0,
) -> float:
    """``3 |||Y|||^w`` for vector fields, ``cbar |Y| / d`` for Hamiltonian generators."""
    if isinstance(Y, VectorField3):
        if weights is None:
            raise SeriesError("weights needed to compute q for a vector-field generator")
        return 3.0 * vf_norm(Y, domain, weights)
    if d is None:
        raise SeriesError("d needed to compute q for a Hamiltonian generator")
    return cbar * ham_norm(Y, domain) / d


def lie_series_apply(
    Y: Generator,
    W: Generator,
    max_terms: int = 40,
    q: float | None = None,
    q_limit: float = 0.9,
    rel_tol: float = 1e-14,
    start: int = 0,
    policy: TruncationPolicy = DEFAULT_POLICY,
    w_norm: float | None = None,
) -> LieSeriesResult:
    """``sum_{start <= k <= K} L_Y^k W / k!`` with adaptive K.

    Summation stops at the first term whose l1 coefficient norm is below
    ``rel_tol * |W|`` or at ``max_terms``.  ``q`` is the caller's contraction
    parameter (see :func:`contraction_q`); ``q >= q_limit`` raises
    :class:`DivergenceRisk`.  ``w_norm`` is the norm of ``W`` used in the tail
    bound (defaults to its l1 coefficient norm).
    """
    if q is not None and q >= q_limit:
        raise DivergenceRisk(q, q_limit)
    wl1 = W.l1()
    w_norm = wl1 if w_norm is None else w_norm
    term = W
    total = W if start == 0 else None
    norms = [wl1]
    K = 0
    for k in range(1, max_terms + 1):
        if not np.any([np.any(c.coeff) for c in _components(term)]):
            break
        term = bracket(Y, term, policy) * (1.0 / k)
        tn = term.l1()
        norms.append(tn)
        if k >= start:
            total = term if total is None else total + term
        K = k
        if tn <= rel_tol * wl1:
            break
    if total is None:
        total = 0 * W
    if q is None:
        tail = math.nan
    elif q < 1:
        tail = q ** (K + 1) / (1 - q) * w_norm
    else:
        tail = math.inf
    return LieSeriesResult(total, K, math.nan if q is None else q, tail, norms[-1], norms)


def lie_series_tail(Y: Generator, W: Generator, start: int, **kw) -> LieSeriesResult:
    """``sum_{k >= start} L_Y^k W / k!``."""
    return lie_series_apply(Y, W, start=start, **kw)


def _components(G: Generator):
    return G.components if isinstance(G, VectorField3) else (G,)


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------


def vf_rhs(X: VectorField3) -> Callable:
    """Vectorised ``z -> X(z)`` for states ``(n, 3)`` ordered ``(I, y, phi)``."""

    def rhs(z):
        return np.real(X(z[:, 0], z[:, 1], z[:, 2], check=False)).T

    return rhs


def ham_rhs(g: HamSeries) -> Callable:
    """Hamiltonian vector field of ``g`` for states ``(n, 6)`` ordered ``(I, phi, p, q, y, x)``."""
    parts = {d: ham_diff(g, d) for d in ("I", "phi", "p", "q", "y", "x")}
    # (I, phi, p, q, y, x) velocities: -g_phi, g_I, -g_q, g_p, -g_x, g_y
    plan = (("phi", -1), ("I", 1), ("q", -1), ("p", 1), ("x", -1), ("y", 1))

    def rhs(z):
        args = (z[:, 0], z[:, 1], z[:, 2], z[:, 3], z[:, 4], z[:, 5])
        return np.stack(
            [s * np.real(ham_evaluate(parts[d], *args, check=False)) for d, s in plan], axis=1
        )

    return rhs


def _box(G: Generator):
    d = G.domain
    if isinstance(G, VectorField3):
        return [(0, d.I_base), (1, d.y_base)]
    return [(0, d.I_base), (4, d.y_base), (5, d.x_base)]


def flow_map(
    X: Generator | Callable,
    z0,
    T: float,
    steps: int = 200,
    box=None,
    allow_escape: bool = False,
    margin: float = 0.0,
):
    """Classical RK4 integration of ``z' = X(z)`` from ``z0`` (shape ``(n, d)`` or ``(d,)``).

    ``box`` is a list of ``(coordinate index, Interval)`` checked after each
    step (defaults to the real base intervals of ``X``).  On escape, raises
    :class:`FlowEscape` unless ``allow_escape``, in which case ``(z, escaped)``
    is returned with escaped rows frozen at their last in-domain state.
    """
    if isinstance(X, VectorField3):
        rhs = vf_rhs(X)
        box = _box(X) if box is None else box
    elif isinstance(X, HamSeries):
        rhs = ham_rhs(X)
        box = _box(X) if box is None else box
    else:
        rhs = X
        box = box or []
    z = np.array(z0, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z).copy()
    escaped = np.zeros(len(z), bool)
    first_escape = math.inf
    if T == 0 or steps == 0:
        return (z[0] if single else z, escaped) if allow_escape else (z[0] if single else z)
    h = T / steps
    for n in range(steps):
        live = ~escaped
        if not live.any():
            break
        zl = z[live]
        k1 = rhs(zl)
        k2 = rhs(zl + 0.5 * h * k1)
        k3 = rhs(zl + 0.5 * h * k2)
        k4 = rhs(zl + h * k3)
        zn = zl + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = np.all(np.isfinite(zn), axis=1)
        for idx, iv in box:
            tol = margin * iv.length
            ok &= (zn[:, idx] >= iv.lo - tol) & (zn[:, idx] <= iv.hi + tol)
        live_idx = np.nonzero(live)[0]
        z[live_idx[ok]] = zn[ok]
        if not ok.all():
            escaped[live_idx[~ok]] = True
            first_escape = min(first_escape, (n + 1) * h)
    if escaped.any() and not allow_escape:
        raise FlowEscape(first_escape, int(escaped.sum()))
    out = z[0] if single else z
    return (out, escaped) if allow_escape else out


def _angle_diff(a, b, angle_cols):
    d = np.array(a - b)
    for c in angle_cols:
        d[:, c] = (d[:, c] + np.pi) % (2 * np.pi) - np.pi
    return d


def compose_flows(generators: list, z, steps: int = 50, **kw):
    """``Phi_0 o Phi_1 o ... o Phi_n (z)`` with ``Phi_j`` the time-one map of ``generators[j]``."""
    for G in reversed(generators):
        z = flow_map(G, z, 1.0, steps, **kw)
    return z


def conjugacy_defect(
    X: Generator,
    Y: Generator | list,
    T: float,
    samples,
    Z: Generator | None = None,
    steps: int = 200,
    gen_steps: int = 50,
    return_escaped: bool = False,
    **lie_kw,
):
    """Per-sample ``|Phi(flow_T^Z(z)) - flow_T^X(Phi(z))|_inf`` with ``Phi`` the time-one map of ``Y``.

    ``Y`` may be a list of generators applied as ``Phi_0 o ... o Phi_n``; then
    ``Z`` must be supplied.  Angles are compared modulo 2 pi.  With
    ``return_escaped`` escaping samples get defect ``nan`` and a mask is returned.
    """
    gens = Y if isinstance(Y, list) else [Y]
    if Z is None:
        if len(gens) != 1:
            raise SeriesError("Z must be given for composed generators")
        lie_kw.setdefault("q_limit", math.inf)
        Z = lie_series_apply(gens[0], X, **lie_kw).transformed
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    ham = isinstance(X, HamSeries)
    angle_cols = (1,) if ham else (2,)
    esc = np.zeros(len(z), bool)

    def run(G, zz, TT, st):
        nonlocal esc
        out, e = flow_map(G, zz, TT, st, allow_escape=True)
        esc |= e
        return out

    left = z
    left = run(Z, left, T, steps)
    for G in reversed(gens):
        left = run(G, left, 1.0, gen_steps)
    right = z
    for G in reversed(gens):
        right = run(G, right, 1.0, gen_steps)
    right = run(X, right, T, steps)
    d = np.abs(_angle_diff(left, right, angle_cols)).max(axis=1)
    if return_escaped:
        d = np.where(esc, np.nan, d)
        return d, esc
    if esc.any():
        raise FlowEscape(math.nan, int(esc.sum()))
    return d


def pushforward_fd(X: VectorField3, Y: VectorField3, z, steps: int = 50, h: float = 1e-5) -> np.ndarray:
    """``DPhi(z)^{-1} X(Phi(z))`` with ``Phi`` the time-one map of ``Y``; central differences."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, dim = z.shape
    scales = np.array([X.domain.I_base.length, X.domain.y_base.length, 1.0])
    cols = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h * scales[j]
        fp = flow_map(Y, z + e, 1.0, steps, box=[])
        fm = flow_map(Y, z - e, 1.0, steps, box=[])
        cols.append((fp - fm) / (2 * e[j]))
    J = np.stack(cols, axis=2)  # (n, dim, dim): J[:, i, j] = d Phi_i / d z_j
    Pz = flow_map(Y, z, 1.0, steps, box=[])
    Xv = vf_rhs(X)(Pz)
    return np.linalg.solve(J, Xv[..., None])[..., 0]
