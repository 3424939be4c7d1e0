"""Multi-player SLAM with game-theoretic motion priors.

Estimates the trajectories of several interacting vehicles plus a static
landmark map from the ego vehicle's measurements.  Other players' motion
is modeled as the outcome of a noncooperative dynamic game, and the joint
estimate is computed by iterated best response over per-player factor
graphs.  A conventional bundle-adjustment estimator without the game
structure is included for comparison.
"""

__version__ = "0.1.0"

from .core import (
    CovarianceSet,
    MeasurementSet,
    Scenario,
    ScenarioError,
    Trajectory,
    VariableLayout,
    load_scenario,
    save_scenario,
    wrap_angle,
)

__all__ = [
    "CovarianceSet",
    "MeasurementSet",
    "Scenario",
    "ScenarioError",
    "Trajectory",
    "VariableLayout",
    "load_scenario",
    "save_scenario",
    "wrap_angle",
]
