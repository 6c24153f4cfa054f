"""Command line front end: ``nqpnf {check,normalize,conjugacy,demo}``.

Exit codes: 0 success, 2 invalid specification, 3 gate failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import driver as dv
from .lie import DivergenceRisk, conjugacy_defect, flow_map
from .norms import ham_norm, vf_norm
from .problem import ProblemSpec, SpecError, desk_hamiltonian, desk_vector_field, parse_spec
from .series import HamSeries, SeriesError, VectorField3

log = logging.getLogger("nqpnf")

EXIT_OK, EXIT_VALIDATION, EXIT_GATE, EXIT_NUMERICAL = 0, 2, 3, 4
CSV_COLUMNS = ("step", "remainder_norm", "generator_norm", "q", "bound_rhs", "bound_ok")
DEFECT_COLUMNS = ("sample", "T", "defect")


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """JSON with shortest round-trip float repr (at most 17 significant digits)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def step_table(result: dv.NormalFormResult) -> list[dict]:
    rows = []
    for r in result.steps:
        rows.append(
            {
                "step": r.step_index,
                "remainder_norm": r.remainder_after,
                "generator_norm": r.generator_norm,
                "q": r.q,
                "bound_rhs": r.bound_rhs,
                "bound_ok": int(r.bound_satisfied),
            }
        )
    return rows


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _load(args) -> ProblemSpec:
    if args.config is None:
        raise SpecError("--config", "a spec file is required")
    spec = parse_spec(Path(args.config))
    raw = spec.to_dict()
    changed = False
    if getattr(args, "p", None) is not None:
        raw["p"] = args.p
        changed = True
    if getattr(args, "epsilon", None) is not None:
        raw["epsilon"] = args.epsilon
        changed = True
    return parse_spec(raw) if changed else spec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def check(spec: ProblemSpec) -> tuple[int, dict]:
    if spec.mode == "vector_field":
        N, P = spec.build_vector_field()
        rep = dv.check_conditions_B(N, P, spec.domain, spec.weights, spec.s2, spec.p)
    else:
        h, f = spec.build_hamiltonian()
        rep = dv.check_conditions_A(h, f, spec.domain, spec.p, spec.constants)
    ok = rep.p_admissible >= spec.p
    doc = {"mode": spec.mode, "p": spec.p, "p_admissible": rep.p_admissible, "ok": ok, "conditions": rep.to_dict()}
    return (EXIT_OK if ok else EXIT_GATE), doc


def normalize(spec: ProblemSpec) -> dv.NormalFormResult:
    if spec.mode == "vector_field":
        N, P = spec.build_vector_field()
        return dv.run_B(N, P, spec.domain, spec.weights, spec.s2, spec.p, gate_policy=spec.gate_policy)
    h, f = spec.build_hamiltonian()
    return dv.run_A(h, f, spec.domain, spec.p, spec.constants, gate_policy=spec.gate_policy)


def run_report(spec: ProblemSpec, result: dv.NormalFormResult, status: str, error: str | None = None) -> dict:
    steps = [s.remainder_after for s in result.steps]
    before = [s.remainder_before for s in result.steps]
    ratios = [a / b if b else 0.0 for a, b in zip(steps, before)]
    return {
        "status": status,
        "error": error,
        "spec": spec.to_dict(),
        "result": result.to_dict(),
        "step_ratio_product": float(np.prod(ratios)) if ratios else 0.0,
    }


def serialize_result(result: dv.NormalFormResult) -> dict:
    def ser(x):
        return None if x is None else x.to_dict()

    return {
        "mode": result.mode,
        "final_domain": result.final_domain.to_dict(),
        "final_remainder": ser(result.final),
        "g": ser(result.g),
        "g_increments": [ser(x) for x in result.g_increments],
        "generators": [ser(x) for x in result.generators],
        "final_norm": result.final_norm,
    }


def reload_norm(doc: dict, weights=None) -> float:
    """Norm of a serialized final remainder on its recorded final domain."""
    from .series import DomainSpec

    dom = DomainSpec.from_dict(doc["final_domain"])
    fin = doc["final_remainder"]
    if fin is None:
        return 0.0
    if fin.get("kind") == "VectorField3":
        return vf_norm(VectorField3.from_dict(fin), dom, weights)
    return ham_norm(HamSeries.from_dict(fin), dom)


def _samples(spec: ProblemSpec, n: int, seed: int) -> np.ndarray:
    """Uniform samples from the central half of the real base box (angles on the full circle)."""
    rng = np.random.default_rng(seed)
    d = spec.domain

    def mid(iv):
        return rng.uniform(iv.center - iv.half_length / 2, iv.center + iv.half_length / 2, n)

    ang = rng.uniform(0, 2 * np.pi, n)
    if spec.mode == "vector_field":
        return np.column_stack([mid(d.I_base), mid(d.y_base), ang])
    pq = 0.5 * d.delta
    return np.column_stack(
        [mid(d.I_base), ang, rng.uniform(-pq, pq, n), rng.uniform(-pq, pq, n), mid(d.y_base), mid(d.x_base)]
    )


def conjugacy(spec: ProblemSpec, result: dv.NormalFormResult, T: float, n: int, seed: int, steps: int = 100):
    """Defects of the composed change of variables against the original flow."""
    if spec.mode == "vector_field":
        N, P = spec.build_vector_field()
        X = N.as_field() + P
        Z = N.as_field() + result.final if result.final is not None else N.as_field()
    else:
        h, f = spec.build_hamiltonian()
        X = h + f
        Z = h + (result.g if result.g is not None else 0 * h) + result.final
    z = _samples(spec, n, seed)
    if T == 0:
        return np.zeros(n), np.zeros(n, bool)
    if not result.generators:
        # nothing was transformed: compare the two flows directly
        a, e1 = flow_map(X, z, T, steps, allow_escape=True)
        b, e2 = flow_map(Z, z, T, steps, allow_escape=True)
        esc = e1 | e2
        diff = np.abs(a - b)
        ang = 2 if spec.mode == "vector_field" else 1
        diff[:, ang] = np.abs((a[:, ang] - b[:, ang] + np.pi) % (2 * np.pi) - np.pi)
        return np.where(esc, np.nan, diff.max(axis=1)), esc
    gens = list(result.generators)
    return conjugacy_defect(X, gens, T, z, Z=Z, steps=steps, gen_steps=max(steps // 4, 10), return_escaped=True)


def _write(out: Path | None, name: str, text: str):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nqpnf", description="Normal forms without small divisors.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="problem spec (JSON)")
        p.add_argument("--out", type=Path, default=None, help="directory for reports")
        p.add_argument("--p", type=int, default=None, help="override the number of iterations")
        p.add_argument("--epsilon", type=float, default=None, help="override epsilon")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("check", help="evaluate the smallness hypotheses only"))
    common(sub.add_parser("normalize", help="run the iterative scheme"))
    pc = sub.add_parser("conjugacy", help="normalize, then test the conjugacy on random samples")
    common(pc)
    pc.add_argument("--T", type=float, default=1.0)
    pc.add_argument("--samples", type=int, default=100)
    pc.add_argument("--tol", type=float, default=1e-5)
    pc.add_argument("--steps", type=int, default=100)
    pd = sub.add_parser("demo", help="run the bundled desk-scale problem")
    common(pd, config_required=False)
    pd.add_argument("--mode", choices=("vector_field", "hamiltonian"), default="vector_field")
    return ap


def _demo_spec(args) -> ProblemSpec:
    if args.mode == "vector_field":
        doc = desk_vector_field(1e-3 if args.epsilon is None else args.epsilon, 4 if args.p is None else args.p)
    else:
        doc = desk_hamiltonian(1e-8 if args.epsilon is None else args.epsilon, 3 if args.p is None else args.p)
    doc["gate_policy"] = "report"
    return parse_spec(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        spec = _demo_spec(args) if args.command == "demo" else _load(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "check":
            code, doc = check(spec)
            text = dumps(doc)
            _write(args.out, "check.json", text)
            print(text)
            return code
        return _run(args, spec, t0)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (dv.GateFailure, DivergenceRisk) as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (SeriesError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _run(args, spec: ProblemSpec, t0: float) -> int:
    out = args.out
    try:
        result = normalize(spec)
        status, code, err = "ok", EXIT_OK, None
    except (dv.GateFailure, DivergenceRisk) as exc:
        result = getattr(exc, "result", None)
        status, code, err = "gate_failure", EXIT_GATE, str(exc)
        if result is None:
            print(f"gate failure: {exc}", file=sys.stderr)
            _write(out, "report.json", dumps({"status": status, "error": err, "spec": spec.to_dict(), "result": None}))
            return code
    report = run_report(spec, result, status, err)
    rows = step_table(result)
    defects = None
    if args.command == "conjugacy" and code == EXIT_OK:
        d, esc = conjugacy(spec, result, args.T, args.samples, args.seed, args.steps)
        valid = d[~esc]
        if valid.size == 0:
            report["conjugacy"] = {"escaped": int(esc.sum()), "max_defect": None}
            code, report["status"] = EXIT_NUMERICAL, "all_samples_escaped"
        else:
            mx = float(valid.max())
            report["conjugacy"] = {
                "T": args.T,
                "samples": args.samples,
                "seed": args.seed,
                "escaped": int(esc.sum()),
                "max_defect": mx,
                "tol": args.tol,
                "passed": mx <= args.tol,
            }
            if mx > args.tol:
                code, report["status"] = EXIT_NUMERICAL, "defect_above_tolerance"
        defects = [{"sample": i, "T": args.T, "defect": float(v)} for i, v in enumerate(d)]
    report["seed"] = args.seed
    text = dumps(_strip_timing(report))
    _write(out, "report.json", text)
    _write(out, "steps.csv", _csv(rows, CSV_COLUMNS))
    if defects is not None:
        _write(out, "defects.csv", _csv(defects, DEFECT_COLUMNS))
    if code != EXIT_GATE:
        _write(out, "result.json", dumps(serialize_result(result)))
    _write(out, "timings.json", dumps({"wall_time": time.perf_counter() - t0, "steps": [s.wall_time for s in result.steps]}))
    print(_csv(rows, CSV_COLUMNS) if args.format == "csv" else text)
    if status == "gate_failure":
        print(f"gate failure: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
