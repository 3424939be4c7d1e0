"""Bundle-adjustment baseline: the joint MAP problem without game structure.

Keeps the ego player's priors and dynamics and every measurement factor,
drops all interaction factors and all non-ego priors/dynamics.  Non-ego
trajectories are then constrained only through the ego's inter-player
measurements, so their controls are not variables at all, and any non-ego
state block no measurement touches gets a deliberately weak full-state
anchor (std 1e4) purely to keep the normal equations solvable.  The
resulting conditioning gap at low measurement noise is a property of the
method, not something to engineer away.
"""

from __future__ import annotations

import numpy as np

from .core import EGO, MeasurementSet, Scenario, VariableLayout
from .game import (
    GameSolution,
    factor_whiteners,
    interplayer_meas_factors,
    landmark_meas_factors,
    own_factors,
    owned_blocks,
)
from .graph import Factor, FactorGraph, solve_lm, whitener

ANCHOR_STD = 1e4


def build_ba_graph(scn: Scenario, meas: MeasurementSet, init_vars: np.ndarray) -> FactorGraph:
    """Assemble the stripped-down joint graph.

    Free blocks: ego states 1..K, ego controls, measured landmarks, and
    all non-ego states (stage 0 included; nothing fixes it here).
    ``init_vars`` supplies the reference values for weak anchors.  The
    returned graph carries a ``diagnostics`` dict listing anchored blocks.
    """
    meas.validate(scn.num_players, scn.horizon, scn.num_landmarks)
    layout = VariableLayout.for_scenario(scn)
    W = factor_whiteners(scn.covariances)
    factors = own_factors(scn, EGO, W)
    factors += landmark_meas_factors(meas, W)
    for j in range(1, scn.num_players):
        factors += interplayer_meas_factors(meas, EGO, j, W)

    free = set(owned_blocks(scn, meas, EGO))
    for j in range(1, scn.num_players):
        for k in range(scn.horizon + 1):
            free.add(("x", j, k))

    touched = {key for f in factors for key in f.keys}
    anchored = []
    W_anchor = whitener(ANCHOR_STD**2 * np.eye(3))
    for j in range(1, scn.num_players):
        for k in range(scn.horizon + 1):
            key = ("x", j, k)
            if key not in touched:
                x_ref = np.array(init_vars[layout.slice_of(key)], copy=True)
                factors.append(Factor("anchor_state", (key,), W_anchor, {"x_ref": x_ref}))
                anchored.append(key)

    graph = FactorGraph(layout, factors, free)
    graph.diagnostics = {"anchored_blocks": anchored}
    return graph


def solve_ba(scn: Scenario, meas: MeasurementSet, init_vars: np.ndarray) -> GameSolution:
    """One joint solve, packaged like a game solution for the harness.

    A ``lambda_overflow`` termination is reported through the result's
    ``converged`` flag and ``report``, never raised; at low measurement
    noise that outcome is an expected finding.
    """
    graph = build_ba_graph(scn, meas, init_vars)
    v, report = solve_lm(graph, init_vars)
    layout = graph.layout
    trajectories, landmarks = layout.unpack(v)
    return GameSolution(
        variables=v,
        trajectories=trajectories,
        landmarks=landmarks,
        ibr_iterations=0,
        converged=report.converged,
        updates=[],
        report=report,
        diagnostics=dict(graph.diagnostics),
    )
