"""Fractional powers of time-dependent parabolic operators on a periodic space-time grid.

Submodules are imported on first attribute access so that the command-line
entry point can set thread limits before the numerical libraries load.
"""
from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "Grid": "grid", "Field": "grid", "ParabolicCube": "grid", "ParabolicPoint": "grid",
    "random_field": "grid", "l2_norm": "grid",
    "CoefficientField": "coefficients",
    "ParabolicOperator": "operator", "SolverError": "operator",
    "YosidaConfig": "semigroup", "SemigroupFamily": "semigroup", "semigroup_apply": "semigroup",
    "QuadratureSpec": "fractional", "c_s": "fractional", "hs_fourier": "fractional",
    "hs_balakrishnan": "fractional", "hs_semigroup": "fractional",
    "extension_profile": "extension", "dtn_limit": "extension", "solve_extension_bvp": "extension",
    "fundamental_solution_column": "kernels", "resolvent_kernel": "kernels",
    "NonlocalDirichletProblem": "regularity", "solve_nonlocal_dirichlet": "regularity",
}

__all__ = ["__version__", *_EXPORTS]


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module 'fracpar' has no attribute {name!r}")
