"""Problem specifications: a small expression language plus JSON documents.

Expressions are parsed with :mod:`ast` and only a whitelist of nodes is
accepted, so nothing from the document is ever executed as Python.
"""
from __future__ import annotations

import ast
import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .driver import Constants
from .homological import HamFrequencies, NormalPart
from .norms import Weights
from .series import (
    DomainSpec,
    FTSeries,
    HamSeries,
    Interval,
    SeriesError,
    VanishingDenominator,
    VectorField3,
    make_ham_series,
    make_series,
)

SYMBOLS = ("I", "y", "x", "phi", "p", "q", "eps")
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
NAMED_CONSTANTS = {"pi": math.pi}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}
_UNOPS = {ast.USub: lambda a: -a, ast.UAdd: lambda a: a}


class SpecError(SeriesError):
    """Invalid problem specification; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ExpressionError(SpecError):
    def __init__(self, field_name: str, source: str, col: int | None, message: str):
        loc = f" at column {col + 1}" if col is not None else ""
        super().__init__(field_name, f"{message}{loc} in {source!r}")
        self.column = col


@dataclass(frozen=True)
class Expression:
    source: str
    tree: ast.Expression = field(repr=False, compare=False)
    symbols: frozenset = frozenset()

    def __call__(self, **env):
        return _eval(self.tree.body, env)

    def uses(self, *names: str) -> bool:
        return any(n in self.symbols for n in names)


def parse_expression(source, field_name: str = "expression", allowed=SYMBOLS) -> Expression:
    """Parse an expression string (numbers are accepted as constant expressions)."""
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        source = repr(float(source))
    if not isinstance(source, str) or not source.strip():
        raise SpecError(field_name, "expected a non-empty expression string")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(field_name, source, (exc.offset or 1) - 1, "syntax error") from None
    used = set()
    for node in ast.walk(tree):
        col = getattr(node, "col_offset", None)
        if isinstance(node, (ast.Expression, ast.Load)) or type(node) in _BINOPS or type(node) in _UNOPS:
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp)):
            op = node.op
            if type(op) not in _BINOPS and type(op) not in _UNOPS:
                raise ExpressionError(field_name, source, col, f"operator {type(op).__name__} not allowed")
            continue
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(field_name, source, col, "only numeric constants allowed")
            continue
        if isinstance(node, ast.Name):
            if node.id in allowed:
                used.add(node.id)
            elif node.id not in FUNCTIONS and node.id not in NAMED_CONSTANTS:
                raise ExpressionError(field_name, source, col, f"unknown symbol {node.id!r}")
            continue
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(field_name, source, col, "only sin, cos, exp may be called")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(field_name, source, col, f"{node.func.id} takes one argument")
            continue
        raise ExpressionError(field_name, source, col, f"{type(node).__name__} not allowed")
    return Expression(source, tree, frozenset(used))


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in NAMED_CONSTANTS:
            return NAMED_CONSTANTS[node.id]
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](_eval(node.args[0], env))
    raise TypeError(type(node).__name__)


# ---------------------------------------------------------------------------
# specification documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoffs:
    kmax: int = 8
    dI: int = 16
    dy: int = 16
    dx: int = 16
    pqmax: int = 4

    def to_dict(self) -> dict:
        return {"kmax": self.kmax, "dI": self.dI, "dy": self.dy, "dx": self.dx, "pqmax": self.pqmax}


@dataclass
class ProblemSpec:
    mode: str
    domain: DomainSpec
    normal: dict
    perturbation: dict
    epsilon: float = 1e-3
    cutoffs: Cutoffs = field(default_factory=Cutoffs)
    weights: Weights | None = None
    s2: float = 0.1
    p: int = 1
    constants: Constants = field(default_factory=Constants)
    y0: float | None = None
    gate_policy: str = "strict"
    raw: dict = field(default_factory=dict, repr=False)

    def with_epsilon(self, eps: float) -> ProblemSpec:
        raw = copy.deepcopy(self.raw)
        raw["epsilon"] = eps
        return parse_spec(raw)

    def with_p(self, p: int) -> ProblemSpec:
        raw = copy.deepcopy(self.raw)
        raw["p"] = p
        return parse_spec(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    # builders -------------------------------------------------------------

    def _ft(self, expr: Expression, eps: float) -> FTSeries:
        c = self.cutoffs
        kmax = c.kmax if expr.uses("phi") else 0
        return make_series(lambda I, y, phi: expr(I=I, y=y, phi=phi, eps=eps), self.domain, kmax, c.dI, c.dy)

    def _ham(self, expr: Expression, eps: float) -> HamSeries:
        c = self.cutoffs
        kmax = c.kmax if expr.uses("phi") else 0
        dx = c.dx if expr.uses("x") else 0
        pq = c.pqmax if expr.uses("p", "q") else 0
        return make_ham_series(
            lambda I, phi, p, q, y, x: expr(I=I, phi=phi, p=p, q=q, y=y, x=x, eps=eps),
            self.domain,
            kmax,
            c.dI,
            c.dy,
            dx,
            pq,
        )

    def build_vector_field(self, epsilon: float | None = None) -> tuple[NormalPart, VectorField3]:
        eps = self.epsilon if epsilon is None else epsilon
        v = self._ft(self.normal["v"], eps)
        w = self._ft(self.normal["omega"], eps)
        N = NormalPart(v, w, self.y0)
        P = VectorField3(*(self._ft(self.perturbation[k], eps) for k in ("P1", "P2", "P3")))
        return N, P

    def build_hamiltonian(self, epsilon: float | None = None) -> tuple[HamSeries, HamSeries]:
        eps = self.epsilon if epsilon is None else epsilon
        return self._ham(self.normal["h"], eps), self._ham(self.perturbation["f"], eps)


def _num(d: dict, key: str, prefix: str = "", default=None, positive=False, nonneg=False) -> float:
    name = f"{prefix}{key}"
    if key not in d:
        if default is None:
            raise SpecError(name, "missing")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise SpecError(name, f"expected a finite number, got {val!r}")
    if positive and val <= 0:
        raise SpecError(name, f"must be positive, got {val}")
    if nonneg and val < 0:
        raise SpecError(name, f"must be non-negative, got {val}")
    return float(val)


def _interval(d: dict, key: str) -> Interval:
    val = d.get(key)
    if not (isinstance(val, (list, tuple)) and len(val) == 2):
        raise SpecError(f"domain.{key}", "expected [lo, hi]")
    lo, hi = (_num({"v": v}, "v", f"domain.{key}") for v in val)
    if not lo < hi:
        raise SpecError(f"domain.{key}", f"empty interval [{lo}, {hi}]")
    return Interval(lo, hi)


def parse_spec(document) -> ProblemSpec:
    """Validate a spec given as a dict, JSON string or path."""
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        document = Path(document).read_text()
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecError("document", f"invalid JSON at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(document, dict):
        raise SpecError("document", "expected a JSON object")
    raw = copy.deepcopy(document)
    mode = raw.get("mode")
    if mode not in ("vector_field", "hamiltonian"):
        raise SpecError("mode", f"expected 'vector_field' or 'hamiltonian', got {mode!r}")
    ham = mode == "hamiltonian"

    dd = raw.get("domain")
    if not isinstance(dd, dict):
        raise SpecError("domain", "missing")
    widths = {k: _num(dd, k, "domain.", nonneg=True) for k in ("r", "sigma", "s")}
    kw = {}
    if ham:
        kw = dict(
            x_base=_interval(dd, "x"),
            xi=_num(dd, "xi", "domain.", nonneg=True),
            delta=_num(dd, "delta", "domain.", positive=True),
        )
    domain = DomainSpec(_interval(dd, "I"), _interval(dd, "y"), **widths, **kw)

    cd = raw.get("cutoffs", {})
    cut_kw = {}
    for k in ("kmax", "dI", "dy", "dx", "pqmax"):
        if k in cd:
            val = cd[k]
            if isinstance(val, bool) or not isinstance(val, int) or val < 0:
                raise SpecError(f"cutoffs.{k}", f"expected a non-negative integer, got {val!r}")
            cut_kw[k] = val
    cutoffs = Cutoffs(**cut_kw)

    def exprs(section: str, keys):
        sd = raw.get(section)
        if not isinstance(sd, dict):
            raise SpecError(section, "missing")
        return {k: parse_expression(sd.get(k, "0" if section == "perturbation" else None), f"{section}.{k}") for k in keys}

    if ham:
        normal = exprs("normal", ["h"])
        pert = exprs("perturbation", ["f"])
    else:
        normal = exprs("normal", ["v", "omega"])
        pert = exprs("perturbation", ["P1", "P2", "P3"])
        for k, e in normal.items():
            if e.uses("phi", "x", "p", "q"):
                raise SpecError(f"normal.{k}", "must depend on I and y only")
        for k, e in pert.items():
            if e.uses("x", "p", "q"):
                raise SpecError(f"perturbation.{k}", "vector-field mode uses I, y, phi only")

    eps = _num(raw, "epsilon", default=1e-3)
    weights = None
    if "weights" in raw:
        wd = raw["weights"]
        if not isinstance(wd, dict):
            raise SpecError("weights", "expected an object")
        weights = Weights(*(_num(wd, k, "weights.", positive=True) for k in ("rho", "tau", "t")))
    elif not ham:
        raise SpecError("weights", "missing (needed in vector_field mode)")
    pval = raw.get("p", 1)
    if isinstance(pval, bool) or not isinstance(pval, int) or pval < 0:
        raise SpecError("p", f"expected a non-negative integer, got {pval!r}")
    cons = raw.get("constants", {})
    constants = Constants(**{k: _num(cons, k, "constants.", positive=True) for k in ("c", "cbar", "ctilde") if k in cons})
    policy = raw.get("gate_policy", "strict")
    if policy not in ("strict", "report"):
        raise SpecError("gate_policy", f"expected 'strict' or 'report', got {policy!r}")
    y0 = raw.get("y0")
    if y0 is not None:
        y0 = _num(raw, "y0")
        if not domain.y_base.lo <= y0 <= domain.y_base.hi:
            raise SpecError("y0", f"{y0} outside the y interval")

    spec = ProblemSpec(
        mode=mode,
        domain=domain,
        normal=normal,
        perturbation=pert,
        epsilon=eps,
        cutoffs=cutoffs,
        weights=weights,
        s2=_num(raw, "s2", default=0.1, positive=True),
        p=pval,
        constants=constants,
        y0=y0,
        gate_policy=policy,
        raw=raw,
    )
    _validate_denominator(spec)
    return spec


def _validate_denominator(spec: ProblemSpec):
    """Reject specs whose ``v`` (or ``d_y h``) vanishes on the real base domain."""
    try:
        if spec.mode == "vector_field":
            spec.build_vector_field()
        else:
            h, _ = spec.build_hamiltonian()
            HamFrequencies.from_h(h)
    except VanishingDenominator as exc:
        raise SpecError("normal.h" if spec.mode == "hamiltonian" else "normal.v", str(exc)) from None
    except SpecError:
        raise
    except SeriesError as exc:
        raise SpecError("normal", str(exc)) from None


# ---------------------------------------------------------------------------
# desk-scale problems
# ---------------------------------------------------------------------------


def desk_vector_field(epsilon: float = 1e-3, p: int = 4, **overrides) -> dict:
    doc = {
        "mode": "vector_field",
        "domain": {"I": [0.5, 1.5], "y": [1.0, 2.0], "r": 0.1, "sigma": 0.1, "s": 0.5},
        "normal": {"v": "y", "omega": "I"},
        "perturbation": {"P1": "eps*sin(phi)", "P2": "eps*cos(phi)", "P3": "eps*sin(phi)"},
        "epsilon": epsilon,
        "cutoffs": {"kmax": 1, "dI": 1, "dy": 1},
        "weights": {"rho": 0.01, "tau": 0.01, "t": 0.05},
        "s2": 0.1,
        "p": p,
        "gate_policy": "strict",
    }
    doc.update(overrides)
    return doc


def desk_hamiltonian(epsilon: float = 1e-3, p: int = 3, **overrides) -> dict:
    doc = {
        "mode": "hamiltonian",
        "domain": {
            "I": [0.5, 1.5],
            "y": [1.0, 2.0],
            "x": [0.0, 1.0],
            "r": 0.1,
            "sigma": 0.1,
            "s": 0.5,
            "xi": 0.1,
            "delta": 0.3,
        },
        "normal": {"h": "I + y + 0.1*p*q"},
        "perturbation": {"f": "eps*cos(phi)*(1 + x + p*q)"},
        "epsilon": epsilon,
        "cutoffs": {"kmax": 1, "dI": 1, "dy": 1, "dx": 1, "pqmax": 2},
        "p": p,
        "gate_policy": "strict",
    }
    doc.update(overrides)
    return doc


def load_spec(path) -> ProblemSpec:
    return parse_spec(Path(path))


def dump_spec(spec: ProblemSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True)


def sampler_from(expr: Expression, eps: float) -> Callable:
    return lambda **kw: expr(eps=eps, **kw)
