"""Caputo-Katugampola fractional calculus of variations."""

from .dsl import Lagrangian, parse
from .errors import (
    AbnormalCase,
    DomainError,
    EvalError,
    FracvarError,
    KindError,
    NonConvergence,
    ParseError,
    ProblemError,
    RootFindFailure,
    SingularConstraint,
)
from .fracops import FracParams, assemble_matrix, ck_deriv, ck_integral, right_deriv, right_integral
from .grid import Grid, SampledFunction, Spacing, make_grid, quad_trapezoid
from .solvers import SolverConfig, SolveReport, optimize_rho, solve
from .special import gamma
from .variational import FREE, Fixed, Herglotz, Holonomic, Isoperimetric, Plain, Problem, SplitDomain

__version__ = "0.1.0"
