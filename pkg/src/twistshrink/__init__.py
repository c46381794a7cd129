"""Weak solutions of one-dimensional SDEs from nested random walks and a
discrete change of measure."""
from .coefficients import CoefficientField, from_expressions, preset
from .errors import ConfigError, HorizonError, PositivityError, RangeError, ResourceError, TwistShrinkError
from .girsanov import evaluate_path, evaluate_paths, q_plus, step_law
from .paths import DiscretePath, discrete_ito_decompose, discrete_stratonovich_decompose, trapezoidal_sum
from .phi import growth_diagnostics, nu, psi_tilde, solve_phi
from .simulate import RunConfig, run_ensemble, simulate_qm_path
from .walker import build_twisted_hierarchy, shrink, skorohod_embed

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "from_expressions", "preset",
    "ConfigError", "HorizonError", "PositivityError", "RangeError", "ResourceError", "TwistShrinkError",
    "evaluate_path", "evaluate_paths", "q_plus", "step_law",
    "DiscretePath", "discrete_ito_decompose", "discrete_stratonovich_decompose", "trapezoidal_sum",
    "growth_diagnostics", "nu", "psi_tilde", "solve_phi",
    "RunConfig", "run_ensemble", "simulate_qm_path",
    "build_twisted_hierarchy", "shrink", "skorohod_embed",
]
