"""End-to-end acceptance checks on the desk problems.

Each test prints a single ``[ACCEPT n] PASS|FAIL ...`` line before asserting.
Run with ``pytest -s tests/test_acceptance.py`` to see them.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from nqpnf import driver as dv
from nqpnf import norms as nm
from nqpnf import series as S
from nqpnf.homological import (
    HamFrequencies,
    NormalPart,
    SolverOptions,
    apply_D_ham,
    kernel_shift_vf,
    solve_ham_homological,
    solve_vf_homological,
    vf_operator,
)
from nqpnf.lie import conjugacy_defect, lie_series_apply
from nqpnf.problem import desk_hamiltonian, desk_vector_field, parse_spec

from conftest import random_ft, random_ham, random_vf

DESK_W = nm.Weights(0.01, 0.01, 0.05)


def _report(n: int, ok: bool, detail: str) -> None:
    print(f"[ACCEPT {n}] {'PASS' if ok else 'FAIL'} {detail}")


def _desk_vf(eps=1e-3, p=4, **kw):
    spec = parse_spec(desk_vector_field(eps, p, **kw))
    N, P = spec.build_vector_field()
    return spec, N, P


def _desk_h(eps=1e-3, p=3):
    spec = parse_spec(desk_hamiltonian(eps, p))
    h, f = spec.build_hamiltonian()
    return spec, h, f


def _ft(fn, d, dI=1, dy=1):
    return S.make_series(fn, d, 0, dI, dy)


def _vf_runs(N, d, seeds, opts):
    """Worst relative residuals (l1 and complex-width) and the worst gain |Y|/|Z| over random Z."""
    res_l1 = res_cw = gain = 0.0
    for seed in seeds:
        Z = random_vf(np.random.default_rng(seed), d, kmax=8, dI=4, dy=8, decay=0.5)
        Y = solve_vf_homological(N, Z, opts)
        R = vf_operator(N, Y) - Z
        res_l1 = max(res_l1, R.l1() / Z.l1())
        res_cw = max(res_cw, nm.vf_norm(R, d, DESK_W) / nm.vf_norm(Z, d, DESK_W))
        gain = max(gain, Y.l1() / Z.l1())
    return res_l1, res_cw, gain


def _ham_runs(freq, d, seeds, opts):
    res_l1 = res_cw = gain = 0.0
    for seed in seeds:
        g = random_ham(np.random.default_rng(seed), d, kmax=8, pqmax=2, dI=2, dy=2, dx=8, decay=0.5)
        phi = solve_ham_homological(freq, g, opts)
        R = apply_D_ham(freq, phi) - g
        res_l1 = max(res_l1, R.l1() / g.l1())
        res_cw = max(res_cw, nm.ham_norm(R, d) / nm.ham_norm(g, d))
        gain = max(gain, phi.l1() / g.l1())
    return res_l1, res_cw, gain


def _ham_h(d, fn):
    return S.make_ham_series(fn, d, 0, 1, 1, 0, 2)


# ---------------------------------------------------------------------------
# 1. homological residual
# ---------------------------------------------------------------------------


def test_acceptance_1_homological_residual():
    spec, N, _ = _desk_vf()
    hspec, h, _ = _desk_h()
    t0 = time.perf_counter()
    vf = _vf_runs(N, spec.domain, range(20), SolverOptions(dy=24))
    hm = _ham_runs(HamFrequencies.from_h(h), hspec.domain, range(100, 120), SolverOptions(dx=24))
    elapsed = time.perf_counter() - t0
    ok = vf[0] <= 1e-8 and hm[0] <= 1e-8 and hm[1] <= 1e-8 and elapsed < 10
    _report(
        1,
        ok,
        f"vf residual {vf[0]:.2e} (complex-width {vf[1]:.2e}), "
        f"ham residual {hm[0]:.2e} (complex-width {hm[1]:.2e}), {elapsed:.1f} s",
    )
    assert vf[0] <= 1e-8
    assert hm[0] <= 1e-8 and hm[1] <= 1e-8
    assert elapsed < 10


# ---------------------------------------------------------------------------
# 2. no small divisors
# ---------------------------------------------------------------------------


def test_acceptance_2_resonant_parity():
    d = S.DomainSpec(S.Interval(0.5, 1.5), S.Interval(1.0, 2.0), 0.1, 0.1, 0.5)
    v = _ft(lambda I, y, phi: y + 0 * I, d)
    opts = SolverOptions(dy=24)
    cases = {
        "generic": NormalPart(v, _ft(lambda I, y, phi: I + 0 * y, d)),
        "omega=0": NormalPart(v, 0 * v),
        "omega/v=1": NormalPart(v, v),
    }
    vf = {k: _vf_runs(N, d, range(8), opts) for k, N in cases.items()}

    hd = S.DomainSpec(S.Interval(0.5, 1.5), S.Interval(1.0, 2.0), 0.1, 0.1, 0.5, S.Interval(0.0, 1.0), 0.1, 0.3)
    hcases = {
        "generic": _ham_h(hd, lambda I, phi, p, q, y, x: math.sqrt(2) * I + y + 0.1 * p * q),
        "omega=0": _ham_h(hd, lambda I, phi, p, q, y, x: y + 0.1 * p * q + 0 * I),
        "omega/v=1": _ham_h(hd, lambda I, phi, p, q, y, x: I + y + 0.1 * p * q),
    }
    hm = {k: _ham_runs(HamFrequencies.from_h(h), hd, range(8), SolverOptions(dx=24)) for k, h in hcases.items()}

    def parity(runs):
        g0 = runs["generic"][2]
        return max(max(r[2] / g0, g0 / r[2]) for r in runs.values())

    worst_res = max(r[0] for r in [*vf.values(), *hm.values()])
    pv, ph = parity(vf), parity(hm)
    ok = worst_res <= 1e-8 and pv <= 2 and ph <= 2
    gains = ", ".join(f"{k} {vf[k][2]:.3f}/{hm[k][2]:.3f}" for k in cases)
    _report(2, ok, f"worst residual {worst_res:.2e}; gains vf/ham {gains}; spread vf {pv:.2f} ham {ph:.2f}")
    assert worst_res <= 1e-8
    assert pv <= 2 and ph <= 2


# ---------------------------------------------------------------------------
# 3. quadratic contraction of one step
# ---------------------------------------------------------------------------


def test_acceptance_3_quadratic_contraction():
    ratios, bound_ok = [], True
    for eps in (1e-3, 1e-4, 1e-5):
        spec, N, P = _desk_vf(eps)
        rep = dv.step_B(N, P, spec.domain, spec.weights, spec.s2, gate_policy="report").report
        bound_ok &= rep.remainder_after <= rep.bound_rhs
        ratios.append(rep.remainder_after / rep.remainder_before**2)
    spread = max(ratios) / min(ratios) - 1
    ok = bound_ok and spread < 0.5
    _report(3, ok, f"|P+|/|P|^2 = {', '.join(f'{r:.4e}' for r in ratios)}; spread {spread:.2%}; bound held {bound_ok}")
    assert bound_ok
    assert spread < 0.5


# ---------------------------------------------------------------------------
# 4. vector-field iteration
# ---------------------------------------------------------------------------


def test_acceptance_4_theorem_B_decay():
    spec, N, P = _desk_vf(1e-3, 4)
    v0, w0 = N.v.coeff.copy(), N.omega.coeff.copy()
    t0 = time.perf_counter()
    alpha, cond = dv.auto_scale_epsilon(N, P, spec.domain, spec.weights, spec.s2, 4)
    res = dv.run_B(N, P * alpha, spec.domain, spec.weights, spec.s2, 4, gate_policy="report")
    elapsed = time.perf_counter() - t0
    seq = res.remainder_norms
    floor = dv.NOISE_REL * seq[0]
    halving = all(b <= 0.5 * a + floor for a, b in zip(seq, seq[1:]))
    same_N = np.array_equal(N.v.coeff, v0) and np.array_equal(N.omega.coeff, w0) and res.normal_increment is None
    eta = cond.eta_sq_terms
    ok = res.decay_factor < 2**-5 and halving and same_N and elapsed < 60
    _report(
        4,
        ok,
        f"eps scaled by {alpha:.3g}; decay {res.decay_factor:.2e}; halving {halving}; N unchanged {same_N}; "
        f"{elapsed:.1f} s; eta^2 terms {', '.join(f'{k} {v:.3g}' for k, v in eta.items())} "
        f"(the omega/v term does not scale with eps)",
    )
    assert res.decay_factor < 2**-5
    assert halving
    assert same_N
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 5. Hamiltonian iteration
# ---------------------------------------------------------------------------


def test_acceptance_5_theorem_A_decay():
    spec, h, f = _desk_h(1e-8, 3)
    res = dv.run_A(h, f, spec.domain, 3, gate_policy="report")
    d = spec.domain
    third = res.final_domain
    scaled = all(
        math.isclose(getattr(third, k), getattr(d, k) / 3, rel_tol=1e-14) for k in ("r", "sigma", "s", "xi", "delta")
    )
    g = np.asarray(res.g.coeff)
    phi_free = not np.any(np.delete(g, res.g.kmax, axis=0))
    ex = res.extra
    violated = res.condition_report.lhs
    ok = res.decay_factor <= 2**-4 and scaled and phi_free and ex["thesis_ok"]
    _report(
        5,
        ok,
        f"decay {res.decay_factor:.2e}; 1/3 domain {scaled}; g phi-free {phi_free}; "
        f"|g - bar f| {ex['g_minus_bar_f']:.3e} <= {ex['thesis_rhs']:.3e}; "
        f"hypotheses {', '.join(f'{k}: {v:.3g}' for k, v in violated.items())}",
    )
    assert res.decay_factor <= 2**-4
    assert scaled
    assert phi_free
    assert ex["thesis_ok"]


# ---------------------------------------------------------------------------
# 6. conjugacy oracle
# ---------------------------------------------------------------------------


def _slowed_desk(eps):
    doc = desk_vector_field(eps, 1)
    doc["normal"]["v"] = "0.3*y"
    spec = parse_spec(doc)
    N, P = spec.build_vector_field()
    return N, P


def test_acceptance_6_conjugacy():
    rng = np.random.default_rng(0)
    z = np.column_stack([rng.uniform(0.75, 1.25, 100), rng.uniform(1.25, 1.45, 100), rng.uniform(0, 2 * np.pi, 100)])

    N, P = _slowed_desk(1e-3)
    X = N.as_field() + P
    Y = S.chop(solve_vf_homological(N, P))
    Z = S.chop(lie_series_apply(Y, X, policy=dv.DRIVER_POLICY, q_limit=math.inf).transformed)
    full = float(conjugacy_defect(X, Y, 1.0, z, Z=Z, steps=100, gen_steps=25).max())

    eps_list = [1e-2, 1e-3, 1e-4]
    single = []
    for eps in eps_list:
        N, P = _slowed_desk(eps)
        X = N.as_field() + P
        Y = S.chop(solve_vf_homological(N, P))
        single.append(float(conjugacy_defect(X, Y, 1.0, z, Z=N.as_field(), steps=100, gen_steps=25).max()))
    slope = float(np.polyfit(np.log(eps_list), np.log(single), 1)[0])
    ok = full <= 1e-6 and abs(slope - 2.0) <= 0.2
    _report(
        6,
        ok,
        f"full conjugate defect {full:.2e}; truncated-to-N defects {', '.join(f'{s:.3e}' for s in single)}; "
        f"slope {slope:.4f}",
    )
    assert full <= 1e-6
    assert abs(slope - 2.0) <= 0.2


# ---------------------------------------------------------------------------
# 7. norm laws
# ---------------------------------------------------------------------------


def _boundary_points(d, n_side=10, n_phi=10):
    zI = nm.stadium_boundary(d.I_base, d.r, n_side)
    zy = nm.stadium_boundary(d.y_base, d.sigma, n_side)
    half = n_phi // 2
    zphi = np.concatenate(
        [np.linspace(0, 2 * np.pi, half, endpoint=False) + 1j * d.s, np.linspace(0, 2 * np.pi, n_phi - half, endpoint=False) - 1j * d.s]
    )
    return np.meshgrid(zI, zy, zphi, indexing="ij")


def test_acceptance_7_norm_laws():
    d = S.DomainSpec(S.Interval(0.5, 1.5), S.Interval(1.0, 2.0), 0.1, 0.1, 0.5)
    X = random_vf(np.random.default_rng(7), d, kmax=3, dI=4, dy=6)
    w = nm.Weights(0.01, 0.02, 0.05)
    homog = max(abs(nm.vf_norm(X, d, w * a) * a / nm.vf_norm(X, d, w) - 1) for a in (0.5, 2.0, 3.7, 1e-3, 1e3))

    rng = np.random.default_rng(77)
    mono = True
    for _ in range(50):
        Xr = random_vf(rng, d, kmax=2, dI=3, dy=3)
        u = d.with_widths(r=rng.uniform(0, 0.3), sigma=rng.uniform(0, 0.3), s=rng.uniform(0, 0.3))
        big = u.with_widths(r=u.r + rng.uniform(0, 0.2), sigma=u.sigma + rng.uniform(0, 0.2), s=u.s + rng.uniform(0, 0.2))
        wr = nm.Weights(*rng.uniform(0.01, 0.1, 3))
        wbig = nm.Weights(*(np.array(wr.as_tuple()) * rng.uniform(1, 3, 3)))
        mono &= nm.vf_norm(Xr, u, wr) <= nm.vf_norm(Xr, big, wr) * (1 + 1e-14)
        mono &= nm.vf_norm(Xr, u, wbig) <= nm.vf_norm(Xr, u, wr) * (1 + 1e-14)

    rng = np.random.default_rng(777)
    worst = 0.0
    for _ in range(50):
        dd = d.with_widths(r=rng.uniform(0, 0.5), sigma=rng.uniform(0, 0.5), s=rng.uniform(0, 0.5))
        f = random_ft(rng, dd, kmax=2, dI=5, dy=5, decay=0.6)
        I, y, phi = _boundary_points(dd)
        sampled = np.abs(S.evaluate(f, I, y, phi, check=False)).max()
        worst = max(worst, sampled / nm.norm(f, dd))
        for k in range(2 * f.kmax + 1):
            mode = S.evaluate(S.FTSeries(f.coeff[k : k + 1], dd), I[..., 0], y[..., 0], 0.0, check=False)
            worst = max(worst, np.abs(mode).max() / max(nm.sup_bound(f.coeff[k], dd), 1e-300))
    ok = homog <= 1e-14 and mono and worst <= 1 + 1e-12
    _report(7, ok, f"homogeneity error {homog:.1e}; monotone on 50 pairs {mono}; worst sampled/bound {worst:.4f}")
    assert homog <= 1e-14
    assert mono
    assert worst <= 1 + 1e-12


# ---------------------------------------------------------------------------
# 8. Lie-series tail
# ---------------------------------------------------------------------------


def test_acceptance_8_lie_tail():
    U = S.DomainSpec(S.Interval(0.5, 1.5), S.Interval(1.0, 2.0), 0.2, 0.2, 0.5)
    w = nm.Weights(0.1, 0.1, 0.25)
    inner = U.with_widths(r=U.r - w.rho, sigma=U.sigma - w.tau, s=U.s - w.t)
    pol = S.TruncationPolicy(kmax=12, dI=16, dy=16)
    worst, qmax = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        Y = random_vf(rng, U, kmax=1, dI=2, dy=2, decay=0.3)
        W = random_vf(rng, U, kmax=1, dI=2, dy=2, decay=0.3)
        Y = Y * (0.5 / (3 * nm.vf_norm(Y, U, w)))
        q = 3 * nm.vf_norm(Y, U, w)
        qmax = max(qmax, q)
        Wn = nm.vf_norm(W, U, w)
        full = lie_series_apply(Y, W, max_terms=20, policy=pol, q_limit=1).transformed
        for K in (2, 4, 8):
            part = lie_series_apply(Y, W, max_terms=K, rel_tol=0, policy=pol, q_limit=1).transformed
            tail = nm.vf_norm(full - part, inner, w)
            worst = max(worst, tail / (q ** (K + 1) / (1 - q) * Wn))
    ok = worst <= 1 and qmax <= 0.5 + 1e-12
    _report(8, ok, f"q = {qmax:.3f}; worst tail / bound over 20 pairs and K in 2, 4, 8: {worst:.2e}")
    assert qmax <= 0.5 + 1e-12
    assert worst <= 1


# ---------------------------------------------------------------------------
# 9. non-uniqueness
# ---------------------------------------------------------------------------


def test_acceptance_9_kernel_freedom():
    spec, N, P = _desk_vf(1e-4, 1)
    d, w, s2 = spec.domain, spec.weights, spec.s2
    base = dv.step_B(N, P, d, w, s2, gate_policy="report")
    N1 = S.vf_mean(P) + S.VectorField3(S.zeros(d), S.zeros(d), S.constant(1e-5, d))
    K = kernel_shift_vf(N, lambda I, th: 1e-5 * np.cos(th) + 2e-6 * I, kmax=2)
    alt = dv.step_B(N, P, d, w, s2, gate_policy="report", normal_increment=N1, kernel=K)
    resid = alt.report.extra["homological_residual"]

    # generators differ by an element solving L_N (Y' - Y) = -N1 up to the kernel
    gen_gap = (vf_operator(N, alt.generator - base.generator) + N1).l1() / P.l1()
    # the transformed system is N + N1 + P'_+ exactly as claimed
    X = N.as_field() + P
    moved = lie_series_apply(alt.generator, X, policy=dv.DRIVER_POLICY, q_limit=math.inf).transformed
    claim = N.as_field() + N1 + alt.P_plus
    closure = (moved - claim).l1() / P.l1()
    phi_free = all(S.is_phi_independent(c) for c in N1.components)
    kernel_used = K.l1() > 0 and (alt.generator - base.generator).l1() > 0
    ok = resid <= 1e-8 and gen_gap <= 1e-8 and closure <= 1e-8 and phi_free and kernel_used
    _report(
        9,
        ok,
        f"residual {resid:.2e}; generator gap {gen_gap:.2e}; normal part N + N1 reproduced to {closure:.2e}; "
        f"N1 phi-independent {phi_free}",
    )
    assert resid <= 1e-8
    assert gen_gap <= 1e-8
    assert closure <= 1e-8
    assert phi_free and kernel_used
