"""Charges and fields of the Klein-Gordon equation with nonlinear point interactions."""

from __future__ import annotations

__version__ = "0.1.0"

from .charges import ChargeHistory, SolverParams, solve_charges
from .model import InitialData, PotentialSpec, SystemConfig, build_system
from .scenarios import Scenario, load_scenario, shipped_scenario

__all__ = [
    "ChargeHistory",
    "InitialData",
    "PotentialSpec",
    "Scenario",
    "SolverParams",
    "SystemConfig",
    "build_system",
    "load_scenario",
    "shipped_scenario",
    "solve_charges",
    "__version__",
]
