"""Normal forms for perturbed systems with one non-periodic direction.

Chebyshev-Fourier(-Taylor) series arithmetic, analytic norm bounds, the
homological solvers, Lie-series transformations and the iterative drivers.
"""
from __future__ import annotations

from .driver import Constants, GateFailure, run_A, run_B, step_A, step_B
from .homological import HamFrequencies, NormalPart, solve_ham_homological, solve_vf_homological
from .norms import Weights, ham_norm, norm, vf_norm
from .problem import ProblemSpec, parse_spec
from .series import DomainSpec, FTSeries, HamSeries, Interval, TruncationPolicy, VectorField3

__version__ = "0.1.0"
