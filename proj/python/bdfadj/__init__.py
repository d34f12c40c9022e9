"""Variable-order BDF integration with discrete adjoints."""

from ._core import (
    AdjointResult,
    KktReport,
    Problem,
    SolverError,
    Tape,
    adjoint,
    coefficients,
    fit_order,
    integrate,
    run_cli,
    tape_from_json,
    verify,
)

__all__ = [
    "AdjointResult",
    "KktReport",
    "Problem",
    "SolverError",
    "Tape",
    "adjoint",
    "coefficients",
    "fit_order",
    "integrate",
    "run_cli",
    "tape_from_json",
    "verify",
]
