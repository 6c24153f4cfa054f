"""Step lemmas and iteration schedules for both normal-form constructions.

Vector-field scheme (``*_B``): ``X = N + P`` with ``N = (0, v, omega)``; each step
solves ``[N, Y] = P`` and replaces ``P`` by the quadratic remainder of
``e^{L_Y} X``.  ``N`` is never modified.

Hamiltonian scheme (``*_A``): ``H = h + g + f``; each step solves
``{phi, h} + tilde f = 0``, moves ``bar f`` into ``g`` and keeps the Lie-series
tails as the new ``f``.

Every smallness hypothesis is evaluated from norm upper bounds and recorded as a
:class:`Gate`.  With ``gate_policy="strict"`` a failing gate raises
:class:`GateFailure` carrying the partial reports; with ``"report"`` failures are
recorded and the computation continues.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import norms as nm
from .homological import (
    DEFAULT_OPTIONS,
    HamFrequencies,
    NormalPart,
    SolverOptions,
    solve_ham_homological,
    solve_vf_homological,
)
from .lie import DivergenceRisk, lie_bracket, lie_series_apply, poisson_bracket
from .norms import Weights, diam_bound, ham_norm, norm, vf_norm, x_extent
from .series import (
    DomainSpec,
    FTSeries,
    HamSeries,
    SeriesError,
    TruncationPolicy,
    VectorField3,
    chop,
    diff,
    ham_mul,
    lift,
    mul,
    project_bar,
    project_tilde,
    reciprocal,
)

log = logging.getLogger(__name__)

#: returned as ``p_admissible`` when no finite bound on p exists
P_UNBOUNDED = 10**9

DRIVER_POLICY = TruncationPolicy(kmax=24, dI=32, dy=32, dx=32, pqmax=6)

#: measured bounds are compared up to this multiple of the initial remainder norm
NOISE_REL = 1e-14


class GateFailure(SeriesError):
    def __init__(self, message: str, reports=None, result=None):
        super().__init__(message)
        self.reports = reports or []
        self.result = result


class DomainExhausted(GateFailure):
    pass


@dataclass(frozen=True)
class Constants:
    """Absolute constants left unspecified by the existence statements."""

    c: float = 162.0 * 16 * 81
    cbar: float = 8.0
    ctilde: float = 16.0 * 81

    def to_dict(self) -> dict:
        return {"c": self.c, "cbar": self.cbar, "ctilde": self.ctilde}


@dataclass
class Gate:
    name: str
    value: float
    limit: float
    strict: bool = True  # value < limit (else value <= limit)

    @property
    def passed(self) -> bool:
        if math.isnan(self.value):
            return False
        return self.value < self.limit if self.strict else self.value <= self.limit

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "limit": self.limit,
            "relation": "<" if self.strict else "<=",
            "passed": self.passed,
        }


def _gates_dict(gates: list[Gate]) -> dict:
    return {g.name: g.to_dict() for g in gates}


def _failed(gates: list[Gate]) -> list[str]:
    return [g.name for g in gates if not g.passed]


def _max_p(eta_sq: float) -> int:
    """Largest integer p >= 0 with p * eta_sq < 1."""
    if eta_sq <= 0:
        return P_UNBOUNDED
    bound = 1.0 / eta_sq
    p = math.ceil(bound) - 1
    return int(max(p, 0)) if p < P_UNBOUNDED else P_UNBOUNDED


def _largest_below(bound: float) -> int:
    """Largest integer p >= 0 with p < bound."""
    if not math.isfinite(bound) or bound > P_UNBOUNDED:
        return P_UNBOUNDED
    return int(max(math.ceil(bound) - 1, 0))


# ---------------------------------------------------------------------------
# vector-field scheme
# ---------------------------------------------------------------------------


@dataclass
class FrequencyNormsB:
    """Norms over the complex (I, y) box of the quotients entering the hypotheses."""

    diam: float
    inv_v: float
    dyv_v: float
    dyw_v: float
    dIv_v: float
    dIw_v: float
    w_v: float

    @classmethod
    def compute(cls, N: NormalPart, domain: DomainSpec) -> FrequencyNormsB:
        iv = reciprocal(N.v)
        q = lambda f: norm(mul(f, iv), domain)
        return cls(
            diam=diam_bound(domain),
            inv_v=norm(iv, domain),
            dyv_v=q(diff(N.v, "y")),
            dyw_v=q(diff(N.omega, "y")),
            dIv_v=q(diff(N.v, "I")),
            dIw_v=q(diff(N.omega, "I")),
            w_v=q(N.omega),
        )

    @property
    def Q(self) -> float:
        return 3.0 * self.diam * self.inv_v


@dataclass
class ConditionReportB:
    Q: float
    chi: float
    theta1: float
    theta2: float
    theta3: float
    eta_sq: float
    eta_sq_terms: dict
    p_admissible: int
    p_requested: int | None
    gates: list
    P_norm: float

    @property
    def passed(self) -> dict:
        return {g.name: g.passed for g in self.gates}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "Q": self.Q,
            "chi": self.chi,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "theta3": self.theta3,
            "eta_sq": self.eta_sq,
            "eta_sq_terms": self.eta_sq_terms,
            "p_admissible": self.p_admissible,
            "p_requested": self.p_requested,
            "P_norm": self.P_norm,
            "gates": _gates_dict(self.gates),
            "ok": self.ok,
        }


def check_conditions_B(
    N: NormalPart,
    P: VectorField3,
    domain: DomainSpec,
    w: Weights,
    s2: float,
    p: int | None = None,
) -> ConditionReportB:
    """Evaluate the hypotheses of the iterated vector-field scheme; never raises on failure."""
    fn = FrequencyNormsB.compute(N, domain)
    D = fn.diam
    Pn = vf_norm(P, domain, w)
    chi = D / s2 * fn.dyv_v
    th1 = 2 * math.exp(s2) * D * fn.dyw_v * w.tau / w.t
    th2 = 4 * D * fn.dIv_v * w.rho / w.tau
    th3 = 8 * D * fn.dIw_v * w.rho / w.t
    term_w = D / w.t * fn.w_v
    term_P = 2**7 * math.exp(2 * s2) * fn.Q**2 * Pn**2
    eta_sq = max(term_w, term_P)
    p_adm = _max_p(eta_sq)
    gates = [
        Gate("rho < r/8", w.rho, domain.r / 8),
        Gate("tau < exp(-s2) sigma/8", w.tau, math.exp(-s2) * domain.sigma / 8),
        Gate("t < s/10", w.t, domain.s / 10),
        Gate("chi <= 1", chi, 1.0, strict=False),
        Gate("theta1 <= 1", th1, 1.0, strict=False),
        Gate("theta2 <= 1", th2, 1.0, strict=False),
        Gate("theta3 <= 1", th3, 1.0, strict=False),
    ]
    if p is not None:
        gates.append(Gate("p eta^2 < 1", p * eta_sq, 1.0))
    return ConditionReportB(
        Q=fn.Q,
        chi=chi,
        theta1=th1,
        theta2=th2,
        theta3=th3,
        eta_sq=eta_sq,
        eta_sq_terms={"omega_over_v": term_w, "perturbation": term_P},
        p_admissible=p_adm,
        p_requested=p,
        gates=gates,
        P_norm=Pn,
    )


def shrink_weights_B(
    N: NormalPart, domain: DomainSpec, w: Weights, s2: float, fn: FrequencyNormsB | None = None
) -> tuple[Weights, DomainSpec]:
    """Weights ``w*`` for the generator and the domain ``u*`` where it is measured.

    ``t* = t`` and ``s1 = t``, so ``u* = (r - 2 rho*, sigma - 2 tau*, s - 5t)``.
    """
    fn = fn or FrequencyNormsB.compute(N, domain)
    D, es = fn.diam, math.exp(s2)
    inv_tau_star = math.exp(-s2) / w.tau - D * fn.dyw_v / w.t
    inv_rho_star = (
        1 / w.rho
        - D * fn.dIv_v * (1 / w.tau - es * D * fn.dyw_v / w.t)
        - D * (fn.dIw_v + es * D * fn.dIv_v * fn.dyw_v) / w.t
    )
    if inv_rho_star <= 0 or inv_tau_star <= 0:
        raise DomainExhausted("shrunk weights are not positive (derivative norms too large)")
    w_star = Weights(1 / inv_rho_star, 1 / inv_tau_star, w.t)
    widths = dict(r=domain.r - 2 * w_star.rho, sigma=domain.sigma - 2 * w_star.tau, s=domain.s - 5 * w.t)
    return w_star, _shrunk(domain, **widths)


def _shrunk(domain: DomainSpec, **widths) -> DomainSpec:
    for k, val in widths.items():
        if val < -1e-12:
            raise DomainExhausted(f"width {k} exhausted ({val:.4g})")
    return domain.with_widths(**{k: max(v, 0.0) for k, v in widths.items()})


def _grow(domain: DomainSpec, w: Weights) -> DomainSpec:
    return domain.with_widths(r=domain.r + w.rho, sigma=domain.sigma + w.tau, s=domain.s + w.t)


def _domain_dict(d: DomainSpec) -> dict:
    return d.widths


@dataclass
class StepReport:
    step_index: int
    kind: str
    remainder_before: float
    remainder_after: float
    generator_norm: float
    q: float
    domain_before: dict
    domain_after: dict
    bound_rhs: float
    gates: list
    noise_floor: float = 0.0
    lie: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def bound_satisfied(self) -> bool:
        return self.remainder_after <= self.bound_rhs + self.noise_floor

    @property
    def gates_passed(self) -> bool:
        return not _failed(self.gates)

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "kind": self.kind,
            "remainder_before": self.remainder_before,
            "remainder_after": self.remainder_after,
            "generator_norm": self.generator_norm,
            "q": self.q,
            "domain_before": self.domain_before,
            "domain_after": self.domain_after,
            "bound_rhs": self.bound_rhs,
            "noise_floor": self.noise_floor,
            "bound_satisfied": self.bound_satisfied,
            "gates": _gates_dict(self.gates),
            "gates_passed": self.gates_passed,
            "lie": self.lie,
            "extra": self.extra,
            "wall_time": self.wall_time,
        }


@dataclass
class StepResultB:
    P_plus: VectorField3
    generator: VectorField3
    report: StepReport
    normal_increment: VectorField3 | None = None
    lie_result: object = None


def _enforce(gates: list[Gate], policy: str, where: str, reports=None):
    bad = _failed(gates)
    if bad and policy == "strict":
        raise GateFailure(f"{where}: failed {', '.join(bad)}", reports)


def step_B(
    N: NormalPart,
    P: VectorField3,
    domain: DomainSpec,
    w: Weights,
    s2: float,
    gate_policy: str = "strict",
    q_limit: float = 0.9,
    normal_increment: VectorField3 | None = None,
    kernel: VectorField3 | None = None,
    opts: SolverOptions = DEFAULT_OPTIONS,
    policy: TruncationPolicy = DRIVER_POLICY,
    chop_tol: float = 1e-15,
    max_terms: int = 40,
    index: int = 0,
    noise_floor: float = 0.0,
) -> StepResultB:
    """One normalisation step ``N + P -> N (+ N1) + P_plus``.

    ``normal_increment`` (phi-independent ``N1``) and ``kernel`` (an element of
    ``ker L_N``) select a non-default generator ``Y = L_N^{-1}(P - N1) + kernel``;
    the transformed normal part is then ``N + N1``.
    """
    t0 = time.perf_counter()
    fn = FrequencyNormsB.compute(N, domain)
    D, Q = fn.diam, fn.Q
    Pn = vf_norm(P, domain, w)
    u_plus = dict(r=domain.r - 4 * w.rho, sigma=domain.sigma - 4 * w.tau * math.exp(s2), s=domain.s - 5 * w.t)
    gates = [
        Gate("theta1 <= 1", 2 * math.exp(s2) * D * fn.dyw_v * w.tau / w.t, 1.0, strict=False),
        Gate("theta2 <= 1", 4 * D * fn.dIv_v * w.rho / w.tau, 1.0, strict=False),
        Gate("theta3 <= 1", 8 * D * fn.dIw_v * w.rho / w.t, 1.0, strict=False),
        Gate("diam |omega/v| / t <= 1", D / w.t * fn.w_v, 1.0, strict=False),
        Gate("chi <= 1", D / s2 * fn.dyv_v, 1.0, strict=False),
        Gate("rho < r/4", w.rho, domain.r / 4),
        Gate("tau < sigma exp(-s2)/4", w.tau, domain.sigma * math.exp(-s2) / 4),
        Gate("t < s/5", w.t, domain.s / 5),
        Gate("2 Q |||P||| < 1", 2 * Q * Pn, 1.0),
    ]
    _enforce(gates, gate_policy, f"step {index}")
    dom_plus = _shrunk(domain, **u_plus)
    try:
        w_star, u_star = shrink_weights_B(N, domain, w, s2, fn)
        gates.append(Gate("w* positive", 0.0, 1.0))
    except DomainExhausted:
        if gate_policy == "strict":
            raise
        # record and measure the generator with the unshrunk weights instead
        gates.append(Gate("w* positive", 1.0, 1.0))
        w_star, u_star = w, dom_plus

    rhs = P if normal_increment is None else P - normal_increment
    Y = solve_vf_homological(N, rhs, opts)
    if kernel is not None:
        Y = Y + kernel
    Y = chop(Y, chop_tol)
    q = 3.0 * vf_norm(Y, _grow(u_star, w_star), w_star)
    gates.append(Gate("q < 1", q, 1.0))
    if gate_policy == "strict" and not q < q_limit:
        raise GateFailure(f"step {index}: Lie series contraction q = {q:.4g}", None)

    Nf = N.as_field()
    lim = math.inf if gate_policy != "strict" else q_limit
    LYN = lie_bracket(Y, Nf, policy)
    first = rhs + LYN  # vanishes up to solver residual
    e2N = lie_series_apply(Y, LYN, max_terms=max_terms, start=1, q=None, policy=policy)
    # sum_{k>=2} L^k N / k! = sum_{m>=1} L^m (L N) / (m+1)!  -> rescale term m by 1/(m+1)
    e2N_sum = _rescaled_tail(Y, LYN, max_terms, policy)
    e1P = lie_series_apply(Y, P, max_terms=max_terms, start=1, q=q if q < lim else None, q_limit=lim, policy=policy)
    P_plus = chop(first + e2N_sum + e1P.transformed, chop_tol)
    after = vf_norm(P_plus, dom_plus, w)
    after_star = vf_norm(P_plus, u_star, w_star)
    bound_rhs = 8 * math.exp(s2) * Q * Pn**2
    QP = Q * Pn
    bound_star = 2 * Q * Pn**2 / (1 - QP) if QP < 1 else math.inf
    report = StepReport(
        step_index=index,
        kind="B",
        remainder_before=Pn,
        remainder_after=after,
        generator_norm=vf_norm(Y, u_star, w_star),
        q=q,
        domain_before=_domain_dict(domain),
        domain_after=_domain_dict(dom_plus),
        bound_rhs=bound_rhs,
        gates=gates,
        noise_floor=noise_floor,
        lie={"P_terms": e1P.terms_used, "N_terms": e2N.terms_used, "tail_bound": e1P.tail_bound},
        extra={
            "Q": Q,
            "w_star": w_star.to_dict(),
            "u_star": _domain_dict(u_star),
            "remainder_after_star": after_star,
            "bound_star": bound_star,
            "homological_residual": first.l1() / max(rhs.l1(), 1e-300),
            "discarded": P_plus.discarded,
        },
        wall_time=time.perf_counter() - t0,
    )
    return StepResultB(P_plus, Y, report, normal_increment)


def _rescaled_tail(Y, W, max_terms, policy, rel_tol=1e-14):
    """``sum_{m>=1} L_Y^m W / (m+1)!``."""
    total = None
    term = W
    wl1 = max(W.l1(), 1e-300)
    for m in range(1, max_terms + 1):
        term = lie_bracket(Y, term, policy) * (1.0 / m)
        piece = term * (1.0 / (m + 1))
        total = piece if total is None else total + piece
        if term.l1() <= rel_tol * wl1:
            break
    return total if total is not None else 0 * W


@dataclass
class NormalFormResult:
    mode: str
    steps: list
    generators: list
    initial_norm: float
    final_norm: float
    final_domain: DomainSpec
    condition_report: object
    final: object = None
    g: object = None
    g_increments: list = field(default_factory=list)
    normal_increment: object = None
    failures: list = field(default_factory=list)
    remainder_norms: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def decay_factor(self) -> float:
        if self.initial_norm == 0:
            return 0.0
        return self.final_norm / self.initial_norm

    @property
    def all_gates_passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "initial_norm": self.initial_norm,
            "final_norm": self.final_norm,
            "decay_factor": self.decay_factor,
            "remainder_norms": self.remainder_norms,
            "final_domain": _domain_dict(self.final_domain),
            "condition_report": self.condition_report.to_dict() if self.condition_report else None,
            "steps": [s.to_dict() for s in self.steps],
            "failures": self.failures,
            "all_gates_passed": self.all_gates_passed,
            "extra": self.extra,
            "wall_time": self.wall_time,
        }


def _trivial_step(kind: str, before: DomainSpec, after: DomainSpec) -> StepReport:
    """Report for a vanishing remainder: nothing to remove, the system is returned unchanged."""
    return StepReport(0, kind, 0.0, 0.0, 0.0, 0.0, _domain_dict(before), _domain_dict(after), 0.0, [])


def _schedule_B(domain: DomainSpec, w0: Weights, s2: float, p: int):
    """Domains and weights of the base step and the p following steps."""
    es = math.exp(s2)
    doms, ws = [domain], [w0]
    d = _shrunk(domain, r=domain.r - 4 * w0.rho, sigma=domain.sigma - 4 * es * w0.tau, s=domain.s - 5 * w0.t)
    if p > 0:
        w1 = w0 / p
        for _ in range(p):
            doms.append(d)
            ws.append(w1)
            d = _shrunk(d, r=d.r - 4 * w1.rho, sigma=d.sigma - 4 * es * w1.tau, s=d.s - 5 * w1.t)
    final = _shrunk(domain, r=domain.r - 8 * w0.rho, sigma=domain.sigma - 8 * es * w0.tau, s=domain.s - 10 * w0.t)
    if p == 0:
        final = d
    return doms, ws, final


def run_B(
    N: NormalPart,
    P: VectorField3,
    domain: DomainSpec,
    w: Weights,
    s2: float,
    p: int,
    gate_policy: str = "strict",
    opts: SolverOptions = DEFAULT_OPTIONS,
    policy: TruncationPolicy = DRIVER_POLICY,
    chop_tol: float = 1e-15,
) -> NormalFormResult:
    """Base step with ``w`` then ``p`` steps with ``w/p``; remainder measured with ``w``."""
    t0 = time.perf_counter()
    cond = check_conditions_B(N, P, domain, w, s2, p)
    failures = [f"conditions: {n}" for n in _failed(cond.gates)]
    if failures and gate_policy == "strict":
        raise GateFailure("hypotheses fail: " + ", ".join(_failed(cond.gates)), [])
    doms, ws, final_dom = _schedule_B(domain, w, s2, p)
    P0n = vf_norm(P, domain, w)
    norms_seq = [P0n]
    reports, gens = [], []
    Pj = P
    if P0n == 0:
        reports.append(_trivial_step("B", domain, final_dom))
        doms, ws = [], []
        norms_seq.append(0.0)
    for j, (dj, wj) in enumerate(zip(doms, ws)):
        try:
            out = step_B(
                N, Pj, dj, wj, s2, gate_policy=gate_policy, opts=opts, policy=policy,
                chop_tol=chop_tol, index=j, noise_floor=NOISE_REL * P0n,
            )
        except GateFailure as exc:
            exc.reports = reports
            exc.result = NormalFormResult("vector_field", reports, gens, P0n, norms_seq[-1], dj, cond, failures=failures + [str(exc)], remainder_norms=norms_seq)
            raise
        reports.append(out.report)
        failures += [f"step {j}: {n}" for n in _failed(out.report.gates)]
        gens.append(out.generator)
        Pj = out.P_plus
        nxt = doms[j + 1] if j + 1 < len(doms) else final_dom
        norms_seq.append(vf_norm(Pj, nxt, w))
    res = NormalFormResult(
        mode="vector_field",
        steps=reports,
        generators=[g for g in gens if g is not None],
        initial_norm=P0n,
        final_norm=norms_seq[-1],
        final_domain=final_dom,
        condition_report=cond,
        final=Pj,
        failures=failures,
        remainder_norms=norms_seq,
        wall_time=time.perf_counter() - t0,
    )
    return res


def auto_scale_epsilon(
    N: NormalPart, P: VectorField3, domain: DomainSpec, w: Weights, s2: float, p: int, safety: float = 0.99
) -> tuple[float, ConditionReportB]:
    """Largest factor ``alpha <= 1`` such that ``alpha P`` meets every perturbation-dependent hypothesis.

    Returns ``(alpha, report for alpha P)``; hypotheses that do not involve P are
    reported as they are (rescaling cannot fix them).
    """
    cond = check_conditions_B(N, P, domain, w, s2, p)
    Pn = cond.P_norm
    if Pn == 0:
        return 1.0, cond
    pp = max(p, 1)
    # 2^7 e^{2 s2} Q^2 |||aP|||^2 < 1/p   and   2 Q |||aP||| < 1 at every step
    a_eta = 1.0 / (math.sqrt(pp * 2**7) * math.exp(s2) * cond.Q * Pn)
    a_step = 1.0 / (2 * cond.Q * Pn)
    alpha = min(1.0, safety * min(a_eta, a_step))
    return alpha, check_conditions_B(N, P * alpha, domain, w, s2, p)


# ---------------------------------------------------------------------------
# Hamiltonian scheme
# ---------------------------------------------------------------------------


@dataclass
class FrequencyNormsA:
    im_w_v: float
    im_w_v_modulus: float
    wp_v: float
    inv_v: float
    im_mode: str

    @classmethod
    def compute(cls, freq: HamFrequencies, domain: DomainSpec, im_mode: str = "sampled") -> FrequencyNormsA:
        iv = reciprocal(freq.v)
        wv = mul(freq.omega, iv)
        modulus = norm(wv, domain)
        sampled = nm.sampled_im_sup(wv, domain)
        return cls(
            im_w_v=sampled if im_mode == "sampled" else modulus,
            im_w_v_modulus=modulus,
            wp_v=norm(mul(freq.omega_prime, iv), domain),
            inv_v=norm(iv, domain),
            im_mode=im_mode,
        )


def _d_total(domain: DomainSpec) -> float:
    """``min{rho s, r xi, delta^2}`` with rho the I width and r the y width."""
    return min(domain.r * domain.s, domain.sigma * domain.xi, domain.delta**2)


@dataclass
class ConditionReportA:
    cX: float
    d: float
    lhs: dict
    p_admissible: int
    p_requested: int | None
    c_const: float
    gates: list
    norms: dict

    @property
    def ok(self) -> bool:
        return not _failed(self.gates)

    def to_dict(self) -> dict:
        return {
            "cX": self.cX,
            "d": self.d,
            "lhs": self.lhs,
            "p_admissible": self.p_admissible,
            "p_requested": self.p_requested,
            "c": self.c_const,
            "norms": self.norms,
            "gates": _gates_dict(self.gates),
            "ok": self.ok,
        }


def check_conditions_A(
    h: HamSeries,
    f: HamSeries,
    domain: DomainSpec,
    p: int | None = None,
    constants: Constants = Constants(),
    im_mode: str = "sampled",
) -> ConditionReportA:
    freq = HamFrequencies.from_h(h)
    fa = FrequencyNormsA.compute(freq, domain, im_mode)
    X = x_extent(domain)
    d = _d_total(domain)
    fn = ham_norm(f, domain)
    pp = 1 if p is None else p
    lhs = {
        "4pX|Im(omega/v)| < s": 4 * pp * X * fa.im_w_v,
        "4pX|omega'/v| < 1": 4 * pp * X * fa.wp_v,
        "c p X/d |f| |1/v| < 1": constants.c * pp * X / d * fn * fa.inv_v if d > 0 else math.inf,
    }
    bounds = [
        domain.s / (4 * X * fa.im_w_v) if fa.im_w_v > 0 else math.inf,
        1.0 / (4 * X * fa.wp_v) if fa.wp_v > 0 else math.inf,
        d / (constants.c * X * fn * fa.inv_v) if fn > 0 else math.inf,
    ]
    p_adm = min(_largest_below(b) for b in bounds)
    gates = []
    if p is not None:
        gates = [
            Gate("4pX|Im(omega/v)| < s", lhs["4pX|Im(omega/v)| < s"], domain.s),
            Gate("4pX|omega'/v| < 1", lhs["4pX|omega'/v| < 1"], 1.0),
            Gate("c p X/d |f| |1/v| < 1", lhs["c p X/d |f| |1/v| < 1"], 1.0),
        ]
    return ConditionReportA(
        cX=X,
        d=d,
        lhs=lhs,
        p_admissible=p_adm,
        p_requested=p,
        c_const=constants.c,
        gates=gates,
        norms={
            "Im(omega/v)": fa.im_w_v,
            "Im(omega/v) modulus bound": fa.im_w_v_modulus,
            "omega'/v": fa.wp_v,
            "1/v": fa.inv_v,
            "f": fn,
            "im_mode": im_mode,
        },
    )


@dataclass(frozen=True)
class Primes:
    """Per-step shrink amounts (rho', s', delta', r', xi'); rho', r' act on the I and y widths."""

    rho: float
    s: float
    delta: float
    r: float
    xi: float

    @property
    def d(self) -> float:
        return min(self.rho * self.s, self.r * self.xi, self.delta**2)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "s": self.s, "delta": self.delta, "r": self.r, "xi": self.xi}


@dataclass
class StepResultA:
    g_increment: HamSeries
    f_plus: HamSeries
    generator: HamSeries
    report: StepReport


def _tilde_over_v(freq: HamFrequencies, ft: HamSeries, policy) -> HamSeries:
    return ham_mul(lift(reciprocal(freq.v), ft.domain), ft, policy)


def step_A(
    h: HamSeries,
    g: HamSeries | None,
    f: HamSeries,
    domain: DomainSpec,
    primes: Primes,
    constants: Constants = Constants(),
    gate_policy: str = "strict",
    q_limit: float = 0.9,
    im_mode: str = "sampled",
    opts: SolverOptions = DEFAULT_OPTIONS,
    policy: TruncationPolicy = DRIVER_POLICY,
    chop_tol: float = 1e-15,
    max_terms: int = 40,
    index: int = 0,
    noise_floor: float = 0.0,
) -> StepResultA:
    """One Hamiltonian step ``h + g + f -> h + (g + bar f) + f_plus`` (stronger-shrink variant)."""
    t0 = time.perf_counter()
    freq = HamFrequencies.from_h(h)
    fa = FrequencyNormsA.compute(freq, domain, im_mode)
    X = x_extent(domain)
    pr = primes
    d = pr.d
    ft = project_tilde(f)
    fb = project_bar(f)
    ftv = ham_norm(_tilde_over_v(freq, ft, policy), domain)
    fn = ham_norm(f, domain)
    gates = [
        Gate("2rho' < rho", 2 * pr.rho, domain.r),
        Gate("2r' < r", 2 * pr.r, domain.sigma),
        Gate("2xi' < xi", 2 * pr.xi, domain.xi),
        Gate("3s' < s", 3 * pr.s, domain.s),
        Gate("3delta' < delta", 3 * pr.delta, domain.delta),
        Gate("X|Im(omega/v)| < s'", X * fa.im_w_v, pr.s),
        Gate("X|omega'/v| < delta'/delta", X * fa.wp_v, pr.delta / domain.delta),
        Gate("ctilde X/d |tilde f/v| < 1", constants.ctilde * X / d * ftv if d > 0 else math.inf, 1.0),
    ]
    _enforce(gates, gate_policy, f"step {index}")
    dom_plus = _shrunk(
        domain,
        r=domain.r - 2 * pr.rho,
        s=domain.s - 3 * pr.s,
        delta=domain.delta - 3 * pr.delta,
        sigma=domain.sigma - 2 * pr.r,
        xi=domain.xi - 2 * pr.xi,
    )
    dom_phi = _shrunk(domain, s=domain.s - pr.s, delta=domain.delta - pr.delta)
    dom_br = _shrunk(
        domain,
        r=domain.r - pr.rho,
        s=domain.s - 2 * pr.s,
        delta=domain.delta - 2 * pr.delta,
        sigma=domain.sigma - pr.r,
        xi=domain.xi - pr.xi,
    )

    phi = chop(solve_ham_homological(freq.for_bracket(), ft, opts), chop_tol)
    phin = ham_norm(phi, dom_phi)
    q = constants.cbar * phin / d if d > 0 else math.inf
    gates.append(Gate("cbar |phi|/d < 1", q, 1.0))
    if gate_policy == "strict" and not q < q_limit:
        raise GateFailure(f"step {index}: Lie series contraction q = {q:.4g}", None)
    lim = math.inf if gate_policy != "strict" else q_limit

    Lh = poisson_bracket(phi, h, policy)
    first = Lh + ft  # vanishes up to solver residual
    tail_h = _ham_rescaled_tail(phi, Lh, max_terms, policy)
    tail_f = lie_series_apply(phi, f, max_terms=max_terms, start=1, q=q if q < lim else None, q_limit=lim, policy=policy)
    parts = [first, tail_h, tail_f.transformed]
    brk_g = 0.0
    if g is not None and np.any(g.coeff):
        tail_g = lie_series_apply(phi, g, max_terms=max_terms, start=1, policy=policy)
        parts.append(tail_g.transformed)
        brk_g = ham_norm(poisson_bracket(phi, g, policy), dom_br)
    f_plus = parts[0]
    for part in parts[1:]:
        f_plus = f_plus + part
    f_plus = chop(f_plus, chop_tol)
    after = ham_norm(f_plus, dom_plus)
    bound_rhs = constants.ctilde * (X / d * ftv * fn + brk_g) if d > 0 else math.inf
    report = StepReport(
        step_index=index,
        kind="A",
        remainder_before=fn,
        remainder_after=after,
        generator_norm=phin,
        q=q,
        domain_before=_domain_dict(domain),
        domain_after=_domain_dict(dom_plus),
        bound_rhs=bound_rhs,
        gates=gates,
        noise_floor=noise_floor,
        lie={"f_terms": tail_f.terms_used, "tail_bound": tail_f.tail_bound, "term_norms": tail_f.term_norms},
        extra={
            "primes": pr.to_dict(),
            "d": d,
            "X": X,
            "tilde_f_over_v": ftv,
            "generator_bound": X * ftv,
            "generator_bound_ok": phin <= X * ftv,
            "bracket_phi_g": brk_g,
            "bar_f_norm": ham_norm(fb, dom_plus),
            "homological_residual": first.l1() / max(ft.l1(), 1e-300),
            "discarded": f_plus.discarded,
        },
        wall_time=time.perf_counter() - t0,
    )
    return StepResultA(fb, f_plus, phi, report)


def _ham_rescaled_tail(phi, W, max_terms, policy, rel_tol=1e-14):
    """``sum_{m>=1} L^m W / (m+1)!`` (the second tail of h written through ``W = L h``)."""
    total = None
    term = W
    wl1 = max(W.l1(), 1e-300)
    for m in range(1, max_terms + 1):
        term = poisson_bracket(phi, term, policy) * (1.0 / m)
        piece = term * (1.0 / (m + 1))
        total = piece if total is None else total + piece
        if term.l1() <= rel_tol * wl1:
            break
    return total if total is not None else 0 * W


def _scaled(domain: DomainSpec, factor: float) -> DomainSpec:
    return domain.with_widths(
        r=domain.r * factor, sigma=domain.sigma * factor, s=domain.s * factor, xi=domain.xi * factor, delta=domain.delta * factor
    )


def schedule_A(domain: DomainSpec, p: int) -> list[Primes]:
    """Base step with (rho/6, s/9, delta/9, r/6, xi/6), then p steps with those divided by p."""
    base = Primes(domain.r / 6, domain.s / 9, domain.delta / 9, domain.sigma / 6, domain.xi / 6)
    out = [base]
    for _ in range(p):
        out.append(Primes(base.rho / p, base.s / p, base.delta / p, base.r / p, base.xi / p))
    return out


def run_A(
    h: HamSeries,
    f: HamSeries,
    domain: DomainSpec,
    p: int,
    constants: Constants = Constants(),
    gate_policy: str = "strict",
    im_mode: str = "sampled",
    opts: SolverOptions = DEFAULT_OPTIONS,
    policy: TruncationPolicy = DRIVER_POLICY,
    chop_tol: float = 1e-15,
) -> NormalFormResult:
    """``p + 1`` Hamiltonian steps ending on the 1/3-scaled domain."""
    t0 = time.perf_counter()
    cond = check_conditions_A(h, f, domain, p, constants, im_mode)
    failures = [f"conditions: {n}" for n in _failed(cond.gates)]
    if failures and gate_policy == "strict":
        raise GateFailure("hypotheses fail: " + ", ".join(_failed(cond.gates)), [])
    f0n = ham_norm(f, domain)
    final_dom = _scaled(domain, 1.0 / 3.0)
    if f0n == 0:
        zero = 0 * f
        return NormalFormResult(
            "hamiltonian",
            [_trivial_step("A", domain, final_dom)],
            [],
            0.0,
            0.0,
            final_dom,
            cond,
            final=zero,
            g=zero,
            failures=failures,
            remainder_norms=[0.0, 0.0],
            extra={"g_minus_bar_f": 0.0, "thesis_rhs": 0.0, "thesis_ok": True, "g_phi_independent": True},
            wall_time=time.perf_counter() - t0,
        )
    reports, gens, incs = [], [], []
    norms_seq = [f0n]
    g = None
    fj = f
    dj = domain
    for j, pr in enumerate(schedule_A(domain, p)):
        try:
            out = step_A(
                h, g, fj, dj, pr, constants, gate_policy, im_mode=im_mode, opts=opts,
                policy=policy, chop_tol=chop_tol, index=j, noise_floor=NOISE_REL * f0n,
            )
        except GateFailure as exc:
            exc.reports = reports
            exc.result = NormalFormResult("hamiltonian", reports, gens, f0n, norms_seq[-1], dj, cond, g=g, g_increments=incs, failures=failures + [str(exc)], remainder_norms=norms_seq)
            raise
        reports.append(out.report)
        failures += [f"step {j}: {n}" for n in _failed(out.report.gates)]
        gens.append(out.generator)
        incs.append(out.g_increment)
        g = out.g_increment if g is None else g + out.g_increment
        fj = out.f_plus
        dj = _shrunk(
            dj,
            r=dj.r - 2 * pr.rho,
            s=dj.s - 3 * pr.s,
            delta=dj.delta - 3 * pr.delta,
            sigma=dj.sigma - 2 * pr.r,
            xi=dj.xi - 2 * pr.xi,
        )
        norms_seq.append(ham_norm(fj, dj))
    bar_f = project_bar(f)
    dg = ham_norm(g - bar_f, final_dom)
    X = x_extent(domain)
    d = _d_total(domain)
    ftv = ham_norm(_tilde_over_v(HamFrequencies.from_h(h), project_tilde(f), policy), domain)
    thesis_rhs = 162 * constants.c * X / d * ftv * f0n if d > 0 else math.inf
    res = NormalFormResult(
        mode="hamiltonian",
        steps=reports,
        generators=gens,
        initial_norm=f0n,
        final_norm=ham_norm(fj, final_dom),
        final_domain=final_dom,
        condition_report=cond,
        final=fj,
        g=g,
        g_increments=incs,
        failures=failures,
        remainder_norms=norms_seq,
        extra={
            "g_minus_bar_f": dg,
            "thesis_rhs": thesis_rhs,
            "thesis_ok": dg <= thesis_rhs,
            "proof_level_rhs": 81 * constants.ctilde * X / d * ftv * f0n if d > 0 else math.inf,
            "g_phi_independent": bool(not np.any(np.delete(np.asarray(g.coeff), g.kmax, axis=0))),
        },
        wall_time=time.perf_counter() - t0,
    )
    return res


def calibrate_constants(result: NormalFormResult, floor: float = 1e-10) -> dict:
    """Smallest constants compatible with the measured quantities of a Hamiltonian run.

    Steps whose incoming remainder is below ``floor`` times the initial norm sit
    at the roundoff floor and are skipped.  ``ctilde_min`` makes the worst
    per-step bound tight, ``cbar_min`` is the smallest ``cbar`` for which
    ``(cbar |phi|/d)^k`` dominates the measured Lie-series term ratios, and
    ``c_min = 162 ctilde_min`` (the relation used by the default constants).
    """
    ct = 0.0
    cb = 0.0
    used = []
    for r in result.steps:
        if r.remainder_before <= floor * result.initial_norm:
            continue
        used.append(r.step_index)
        e = r.extra
        base = e["X"] / e["d"] * e["tilde_f_over_v"] * r.remainder_before + e["bracket_phi_g"]
        if base > 0:
            ct = max(ct, r.remainder_after / base)
        terms = r.lie.get("term_norms", [])
        if r.generator_norm > 0 and len(terms) > 1 and terms[0] > 0:
            ratios = [(t / terms[0]) ** (1.0 / k) for k, t in enumerate(terms[1:], 1) if t > 0]
            if ratios:
                cb = max(cb, max(ratios) * e["d"] / r.generator_norm)
    return {"ctilde_min": ct, "cbar_min": cb, "c_min": 162 * ct, "steps_used": used}


def auto_scale_epsilon_A(
    h: HamSeries,
    f: HamSeries,
    domain: DomainSpec,
    p: int,
    constants: Constants = Constants(),
    im_mode: str = "sampled",
    safety: float = 0.99,
) -> tuple[float, ConditionReportA]:
    """Largest factor ``alpha <= 1`` with ``alpha f`` meeting the f-dependent hypothesis."""
    cond = check_conditions_A(h, f, domain, p, constants, im_mode)
    lhs = cond.lhs["c p X/d |f| |1/v| < 1"]
    if lhs == 0:
        return 1.0, cond
    alpha = min(1.0, safety / lhs)
    return alpha, check_conditions_A(h, f * alpha, domain, p, constants, im_mode)
