"""Equilibrium portfolio strategies for time-inconsistent investors with CRRA betweenness preferences."""

__version__ = "0.1.0"

from .constraint import Ball, Box, ConvexSet, FullSpace, Halfspace, Intersection, NonnegOrthant
from .equilibrium import (
    EquilibriumSolution,
    Problem,
    Regime,
    check_wellposedness,
    solve_borrowing,
    solve_constrained,
    solve_unconstrained_closed_form,
)
from .errors import BeqError
from .market import MarketModel
from .preference import CustomPreference, DiscreteMeasure, MixedCRRA, WeightedUtility, build_G_table

__all__ = [
    "__version__", "Ball", "Box", "ConvexSet", "FullSpace", "Halfspace", "Intersection", "NonnegOrthant",
    "EquilibriumSolution", "Problem", "Regime", "check_wellposedness", "solve_borrowing", "solve_constrained",
    "solve_unconstrained_closed_form", "BeqError", "MarketModel", "CustomPreference", "DiscreteMeasure",
    "MixedCRRA", "WeightedUtility", "build_G_table",
]
