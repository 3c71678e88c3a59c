"""Scenario fuzzing for a simulated perception stack."""

from .scenario import Category, EgoSpec, ObstacleSpec, Scenario, load_scenario, save_scenario, validate

__all__ = ["Category", "EgoSpec", "ObstacleSpec", "Scenario", "load_scenario", "save_scenario", "validate"]
__version__ = "0.1.0"
