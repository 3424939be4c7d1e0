"""Scenario realization: equilibrium ground truth and synthetic measurements.

Ground truth comes from solving the measurement-free planning game, then
re-rolling the equilibrium controls through the exact dynamics so the
returned state sequences are feasible to machine precision (the solver
only enforces dynamics softly).  Truth is deterministic; noise enters
exclusively through measurement synthesis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    EGO,
    CovarianceSet,
    MeasurementSet,
    Scenario,
    Trajectory,
    VariableLayout,
    wrap_angle,
)
from .game import solve_ibr
from .models import dubins_step, interplayer_meas, landmark_meas

# std of the initial-condition perturbation at scale 1, per state component
PERTURB_STD = np.array([0.0, 0.5, 0.05])   # longitudinal, lateral, heading


@dataclass(frozen=True)
class TrialSpec:
    """Randomness knobs of one Monte Carlo trial."""

    seed: int
    noise_std: float
    perturb_scale: float = 1.0

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")
        if self.perturb_scale < 0:
            raise ValueError("perturb_scale must be >= 0")


@dataclass
class GroundTruth:
    """Equilibrium trajectories and the true map, with solve provenance."""

    trajectories: list
    landmarks: np.ndarray
    ibr_rounds: int
    potential: float
    converged: bool = True

    @property
    def num_players(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return self.trajectories[0].horizon

    def to_dict(self) -> dict:
        return {
            "trajectories": [
                {"player_id": t.player_id, "states": t.states.tolist(),
                 "controls": t.controls.tolist()}
                for t in self.trajectories
            ],
            "landmarks": np.asarray(self.landmarks).tolist(),
            "ibr_rounds": self.ibr_rounds,
            "potential": self.potential,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        trajs = [
            Trajectory(t["player_id"], np.asarray(t["states"], dtype=float),
                       np.asarray(t["controls"], dtype=float))
            for t in d["trajectories"]
        ]
        return cls(trajs, np.asarray(d["landmarks"], dtype=float).reshape(-1, 2),
                   int(d["ibr_rounds"]), float(d["potential"]),
                   bool(d.get("converged", True)))


def straight_line_vars(scn: Scenario, layout: VariableLayout | None = None) -> np.ndarray:
    """Zero-control rollouts from the scenario's initial states.

    Landmark blocks are filled with the scenario's landmark positions;
    they only matter when something estimates or reads them.
    """
    if layout is None:
        layout = VariableLayout.for_scenario(scn)
    v = np.zeros(layout.dim)
    for i in range(scn.num_players):
        x = np.asarray(scn.initial_states[i], dtype=float)
        v[layout.slice_of(("x", i, 0))] = x
        for k in range(scn.horizon):
            x = dubins_step(x, 0.0, scn.dt, scn.speed)
            v[layout.slice_of(("x", i, k + 1))] = x
    for a in range(scn.num_landmarks):
        v[layout.slice_of(("l", a))] = scn.landmarks[a]
    return v


def rollout(scn: Scenario, player_id: int, controls: np.ndarray) -> Trajectory:
    """Exact rollout of a control sequence from the player's initial state."""
    states = np.zeros((scn.horizon + 1, 3))
    states[0] = scn.initial_states[player_id]
    for k in range(scn.horizon):
        states[k + 1] = dubins_step(states[k], controls[k], scn.dt, scn.speed)
    return Trajectory(player_id, states, np.asarray(controls, dtype=float))


def plan_ground_truth(scn: Scenario) -> GroundTruth:
    """Solve the measurement-free game and return feasible truth trajectories."""
    from .game import evaluate_potential

    layout = VariableLayout.for_scenario(scn)
    empty = MeasurementSet.empty()
    sol = solve_ibr(scn, empty, straight_line_vars(scn, layout))
    trajs = [rollout(scn, t.player_id, t.controls) for t in sol.trajectories]
    v = layout.pack(trajs, scn.landmarks)
    return GroundTruth(
        trajectories=trajs,
        landmarks=np.array(scn.landmarks, copy=True),
        ibr_rounds=sol.ibr_iterations,
        potential=evaluate_potential(scn, empty, v),
        converged=sol.converged,
    )


def perturb_initials(scn: Scenario, seed: int, scale: float = 1.0) -> Scenario:
    """Scenario variant with Gaussian-perturbed initial states.

    Per player: nothing longitudinal, 0.5 m lateral, 0.05 rad heading
    (each times ``scale``).  Deterministic given the seed.
    """
    if scale < 0:
        raise ValueError("scale must be >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((scn.num_players, 3)) * (PERTURB_STD * scale)
    new = np.asarray(scn.initial_states, dtype=float) + noise
    new[:, 2] = wrap_angle(new[:, 2])
    return replace(scn, initial_states=new)


def with_noise_level(scn: Scenario, sigma: float, w_h=None, w_h_bar=None) -> Scenario:
    """Scenario with measurement covariances set to sigma^2 times the shapes.

    The shapes default to the scenario's own measurement covariances, so a
    base scenario carries the unit-sigma sensor model and this picks the
    level.  Apply it to the base scenario, not repeatedly to its own
    output.  The estimator is given the true noise level; prior, dynamics,
    and interaction covariances are untouched.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    w_h = scn.covariances.sigma_h if w_h is None else np.asarray(w_h, dtype=float)
    w_h_bar = (scn.covariances.sigma_h_bar if w_h_bar is None
               else np.asarray(w_h_bar, dtype=float))
    cov = scn.covariances
    new_cov = CovarianceSet(
        sigma_f=cov.sigma_f, sigma_g=cov.sigma_g, sigma_g_hat=cov.sigma_g_hat,
        sigma_h=sigma**2 * w_h, sigma_h_bar=sigma**2 * w_h_bar, sigma_b=cov.sigma_b,
    )
    return replace(scn, covariances=new_cov, noise_std=sigma)


def synthesize_measurements(
    gt: GroundTruth,
    spec: TrialSpec,
    interplayer_mode: str = "both",
    w_h=None,
    w_h_bar=None,
    max_range: float = np.inf,
) -> MeasurementSet:
    """Noisy measurements of every landmark and every non-ego player.

    At each stage 0..K-1 the ego observes all landmarks (range/bearing)
    and each non-ego player's planar position in the ego body frame; with
    ``interplayer_mode="both"`` each non-ego player also observes the ego.
    Noise is ``sigma * L @ standard_normal`` with ``L`` the Cholesky
    factor of the unit-scale shape matrix (identity by default).  Bearing
    noise is applied before wrapping.  Pure function of its arguments.
    """
    if interplayer_mode not in ("both", "ego_only"):
        raise ValueError(f"unknown interplayer_mode {interplayer_mode!r}")
    L_h = np.linalg.cholesky(np.eye(2) if w_h is None else np.asarray(w_h, dtype=float))
    L_hb = np.linalg.cholesky(np.eye(2) if w_h_bar is None else np.asarray(w_h_bar, dtype=float))
    sigma = spec.noise_std
    rng = np.random.default_rng(spec.seed)
    ms = MeasurementSet()
    ego_states = gt.trajectories[EGO].states
    for k in range(gt.horizon):
        xe = ego_states[k]
        for a in range(gt.landmarks.shape[0]):
            z = landmark_meas(xe, gt.landmarks[a])
            if z[0] > max_range:
                continue
            z = z + sigma * (L_h @ rng.standard_normal(2))
            z[1] = wrap_angle(z[1])
            ms.landmark[(k, a)] = z
        for j in range(1, gt.num_players):
            xj = gt.trajectories[j].states[k]
            z = interplayer_meas(xe, xj) + sigma * (L_hb @ rng.standard_normal(2))
            ms.interplayer[(k, EGO, j)] = z
            if interplayer_mode == "both":
                z = interplayer_meas(xj, xe) + sigma * (L_hb @ rng.standard_normal(2))
                ms.interplayer[(k, j, EGO)] = z
    return ms


def estimation_init(scn: Scenario, meas: MeasurementSet,
                    layout: VariableLayout | None = None) -> np.ndarray:
    """Initial guess shared by both estimators.

    Straight-line rollouts for every player; each measured landmark is
    inverse-projected from the first stage it was seen, using the guessed
    ego pose at that stage.  Unmeasured landmark blocks stay zero (they
    are frozen and factorless).
    """
    if layout is None:
        layout = VariableLayout.for_scenario(scn)
    v = straight_line_vars(scn, layout)
    for a in range(scn.num_landmarks):
        v[layout.slice_of(("l", a))] = 0.0
    first_seen = {}
    for (k, a) in sorted(meas.landmark.keys()):
        first_seen.setdefault(a, k)
    for a, k in first_seen.items():
        rng_, bearing = meas.landmark[(k, a)]
        pose = layout.state(v, EGO, k)
        heading = pose[2] + bearing
        v[layout.slice_of(("l", a))] = pose[:2] + rng_ * np.array(
            [np.cos(heading), np.sin(heading)]
        )
    return v


# --- replay/debugging serialization ----------------------------------------


def save_ground_truth(gt: GroundTruth, path) -> None:
    Path(path).write_text(json.dumps(gt.to_dict(), indent=2) + "\n")


def load_ground_truth(path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))


def save_measurements(ms: MeasurementSet, path) -> None:
    Path(path).write_text(json.dumps(ms.to_dict(), indent=2) + "\n")


def load_measurements(path) -> MeasurementSet:
    return MeasurementSet.from_dict(json.loads(Path(path).read_text()))
