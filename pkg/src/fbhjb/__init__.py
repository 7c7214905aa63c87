"""Numerical toolkit for fully coupled controlled FBSDEs and their HJB equations."""

from __future__ import annotations

from .algebra import AlgebraSolution, solve_algebra
from .core import (AssumptionReport, ControlSet, GateConstants, MonotonicityConfig, ProblemSpec,
                   SpaceTimeGrid, check_monotonicity_sampled, check_standing_assumptions,
                   probe_lipschitz)
from .errors import (AssumptionGateError, CflViolation, ConfigError, FbhjbError, NonContractive,
                     PicardDiverged, SolverError)
from .expr import Expression, parse
from .fbsde import FBSDESolution, backward_semigroup, solve_fully_coupled
from .hjb import residual, solve_hjb
from .paths import EnsembleConfig, PathEnsemble, generate_ensemble
from .problems import load_problem, problem_from_dict, registry_problem
from .value import ValueField, compute_value_dpp, estimate_regularity
from .verify import (ito_residual, mollify, pr_um_pipeline, uniqueness_check_frozen_sigma,
                     uniqueness_check_full)

__version__ = "0.1.0"

__all__ = [
    "AlgebraSolution", "AssumptionGateError", "AssumptionReport", "CflViolation", "ConfigError",
    "ControlSet", "EnsembleConfig", "Expression", "FBSDESolution", "FbhjbError", "GateConstants",
    "MonotonicityConfig", "NonContractive", "PathEnsemble", "PicardDiverged", "ProblemSpec",
    "SolverError", "SpaceTimeGrid", "ValueField", "backward_semigroup", "check_monotonicity_sampled",
    "check_standing_assumptions", "compute_value_dpp", "estimate_regularity", "generate_ensemble",
    "ito_residual", "load_problem", "mollify", "parse", "pr_um_pipeline", "probe_lipschitz",
    "problem_from_dict", "registry_problem", "residual", "solve_algebra", "solve_fully_coupled",
    "solve_hjb", "uniqueness_check_frozen_sigma", "uniqueness_check_full",
]
