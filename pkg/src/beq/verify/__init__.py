"""Independent checks of equilibrium candidates: analytic objective, HJB residuals, Monte Carlo."""

from .hjb import (
    FDerivatives,
    HJBReport,
    analytic_J,
    f_and_derivatives,
    hjb_report,
    hjb_residual,
    max_hjb_residual,
)
from .montecarlo import (
    Piecewise,
    PerturbationReport,
    SimConfig,
    implicit_J_mc,
    perturbation_test,
    perturbed,
    simulate_joint,
    simulate_terminal_wealth,
)

__all__ = [
    "FDerivatives", "HJBReport", "analytic_J", "f_and_derivatives", "hjb_report", "hjb_residual",
    "max_hjb_residual", "Piecewise", "PerturbationReport", "SimConfig", "implicit_J_mc",
    "perturbation_test", "perturbed", "simulate_joint", "simulate_terminal_wealth",
]
