"""Numerical laboratory for semiclassical joint quasimodes and L^p growth."""
from .analysis import ExponentQuery, critical_p, delta_exponent, fit_exponent, lp_norm, run_sweep, sogge_delta
from .errors import (AliasingError, DimensionError, EllipticityError, EmptyWindowError, PreconditionError,
                     QmlabError, ReductionError, SingularTransformError, SymbolSyntaxError)
from .quantization import (FrequencyFunction, GridFunction, TorusGrid, apply_operator, moyal_compose,
                           inverse_semiclassical_fourier, semiclassical_fourier)
from .quasimodes import QuasimodeSpec, build, defect_report
from .reduction import reduce_all
from .symbols import PhasePoint, Symbol, Tolerances, check_admissibility, parse_symbol

__version__ = "0.1.0"
__all__ = [
    "AliasingError",
    "DimensionError",
    "EllipticityError",
    "EmptyWindowError",
    "ExponentQuery",
    "FrequencyFunction",
    "GridFunction",
    "PhasePoint",
    "PreconditionError",
    "QmlabError",
    "QuasimodeSpec",
    "ReductionError",
    "SingularTransformError",
    "Symbol",
    "SymbolSyntaxError",
    "Tolerances",
    "TorusGrid",
    "apply_operator",
    "build",
    "check_admissibility",
    "critical_p",
    "defect_report",
    "delta_exponent",
    "fit_exponent",
    "inverse_semiclassical_fourier",
    "lp_norm",
    "moyal_compose",
    "parse_symbol",
    "reduce_all",
    "run_sweep",
    "semiclassical_fourier",
    "sogge_delta",
]
