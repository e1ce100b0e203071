"""Solver and Ulam-stability certifier for weighted fractional Volterra problems."""

from .exprlang import (
    EvalError,
    Expr,
    ExprError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownFunctionError,
    UnknownVariableError,
    evaluate,
    parse,
    to_source,
)
from .psicalc import (
    DegenerateGridError,
    FractionalOrder,
    GridFunction,
    GridMismatchError,
    InvalidOrderError,
    PsiGrid,
    QuadraturePlan,
    build_plan,
    frac_integral,
    hilfer_derivative,
    make_grid,
)
from .solver import (
    ContractionReport,
    NonContractiveError,
    ProblemSpec,
    SingularPrefactorError,
    SolveReport,
    SpotCheckReport,
    contraction_check,
    lipschitz_spot_check,
    picard_step,
    prefactor,
    prefactor_at,
    problem_grid,
    solve,
)
from .stability import (
    ContractionViolatedError,
    DegenerateDenominatorError,
    InadmissiblePerturbationError,
    NonpositivePhiError,
    StabilityCertificate,
    estimate_M,
    hu_bound,
    hur_bound,
    make_perturbed,
    verify,
)

__version__ = "0.1.0"

__all__ = [
    "EvalError",
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "UnboundVariableError",
    "UnknownFunctionError",
    "UnknownVariableError",
    "evaluate",
    "parse",
    "to_source",
    "DegenerateGridError",
    "FractionalOrder",
    "GridFunction",
    "GridMismatchError",
    "InvalidOrderError",
    "PsiGrid",
    "QuadraturePlan",
    "build_plan",
    "frac_integral",
    "hilfer_derivative",
    "make_grid",
    "ContractionReport",
    "NonContractiveError",
    "ProblemSpec",
    "SingularPrefactorError",
    "SolveReport",
    "SpotCheckReport",
    "contraction_check",
    "lipschitz_spot_check",
    "picard_step",
    "prefactor",
    "prefactor_at",
    "problem_grid",
    "solve",
    "ContractionViolatedError",
    "DegenerateDenominatorError",
    "InadmissiblePerturbationError",
    "NonpositivePhiError",
    "StabilityCertificate",
    "estimate_M",
    "hu_bound",
    "hur_bound",
    "make_perturbed",
    "verify",
    "__version__",
]
