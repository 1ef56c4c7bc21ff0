"""Optimal tracking for linear time-varying systems with state and input delays,
transcribed with Chebyshev wavelets into a convex quadratic program."""

from .chebwave import CoeffVector, PiecewisePoly, WaveletBasis
from .lqt_model import (ConstraintSet, DelayedLqtProblem, GridError, PointConstraint, TerminalConstraint,
                        TimeFunction, WindowInequality, expand_problem, output_to_state_reform, rescale,
                        validate_grid)
from .tracker import TrackerSolution, solve_problem

__version__ = "0.1.0"

__all__ = [
    "CoeffVector", "PiecewisePoly", "WaveletBasis", "ConstraintSet", "DelayedLqtProblem", "GridError",
    "PointConstraint", "TerminalConstraint", "TimeFunction", "WindowInequality", "expand_problem",
    "output_to_state_reform", "rescale", "validate_grid", "TrackerSolution", "solve_problem",
]
