"""Domain types, block-variable layout, and scenario configuration.

States are length-3 float arrays ``(px, py, theta)`` in meters/radians,
controls are scalar yaw rates in rad/s, landmarks are 2-D positions in
meters.  Player ids and stage indices are 0-based throughout; player 0 is
the ego player.  A scenario with horizon K has K+1 state stamps (0..K)
and K control stamps (0..K-1); measurements exist at stages 0..K-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

STATE_DIM = 3
CONTROL_DIM = 1
LANDMARK_DIM = 2

EGO = 0


class ScenarioError(ValueError):
    """Raised when a scenario file fails to parse or violates an invariant."""


def wrap_angle(a):
    """Wrap an angle (scalar or array) to the interval (-pi, pi].

    The boundary maps to +pi: ``wrap_angle(-pi) == pi``.  Idempotent and
    2*pi-periodic.
    """
    return np.pi - (np.pi - a) % (2.0 * np.pi)


# ---------------------------------------------------------------------------
# Trajectories and measurements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """State/control sequence of one player.

    ``states`` has shape (K+1, 3) and ``controls`` shape (K,).
    """

    player_id: int
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        if states.ndim != 2 or states.shape[1] != STATE_DIM:
            raise ValueError(f"states must be (K+1, 3), got {states.shape}")
        if controls.ndim != 1:
            raise ValueError(f"controls must be (K,), got {controls.shape}")
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError(
                f"got {states.shape[0]} states for {controls.shape[0]} controls; "
                "expected K+1 states and K controls"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def positions(self) -> np.ndarray:
        """Planar positions, shape (K+1, 2)."""
        return self.states[:, :2]


@dataclass
class MeasurementSet:
    """Landmark and inter-player measurements.

    ``landmark`` maps (stage, landmark_index) to a (range, bearing) pair;
    ``interplayer`` maps (stage, observer, target) to a relative planar
    position in the observer's body frame.  Inter-player entries exist only
    for pairs involving the ego player (min of the two ids is 0).
    """

    landmark: dict = field(default_factory=dict)
    interplayer: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "MeasurementSet":
        return cls()

    def validate(self, num_players: int, horizon: int, num_landmarks: int) -> None:
        for (k, a), z in self.landmark.items():
            z = np.asarray(z, dtype=float)
            if not (0 <= k < horizon):
                raise ValueError(f"landmark measurement stage {k} outside [0, {horizon})")
            if not (0 <= a < num_landmarks):
                raise ValueError(f"landmark measurement index {a} outside [0, {num_landmarks})")
            if z.shape != (2,):
                raise ValueError(f"landmark measurement ({k},{a}) must be a 2-vector")
            if not (-np.pi < z[1] <= np.pi):
                raise ValueError(f"bearing of landmark measurement ({k},{a}) not in (-pi, pi]")
        for (k, i, j), z in self.interplayer.items():
            z = np.asarray(z, dtype=float)
            if min(i, j) != EGO:
                raise ValueError(
                    f"inter-player measurement ({k},{i},{j}) does not involve the ego player"
                )
            if i == j:
                raise ValueError(f"inter-player measurement ({k},{i},{j}) relates a player to itself")
            if not (0 <= k < horizon) or not (0 <= i < num_players) or not (0 <= j < num_players):
                raise ValueError(f"inter-player measurement ({k},{i},{j}) out of range")
            if z.shape != (2,):
                raise ValueError(f"inter-player measurement ({k},{i},{j}) must be a 2-vector")

    def measured_landmarks(self) -> set:
        return {a for (_, a) in self.landmark.keys()}

    def to_dict(self) -> dict:
        return {
            "landmark": {f"{k},{a}": np.asarray(z).tolist() for (k, a), z in self.landmark.items()},
            "interplayer": {
                f"{k},{i},{j}": np.asarray(z).tolist() for (k, i, j), z in self.interplayer.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementSet":
        landmark = {}
        for key, z in d.get("landmark", {}).items():
            k, a = (int(s) for s in key.split(","))
            landmark[(k, a)] = np.asarray(z, dtype=float)
        interplayer = {}
        for key, z in d.get("interplayer", {}).items():
            k, i, j = (int(s) for s in key.split(","))
            interplayer[(k, i, j)] = np.asarray(z, dtype=float)
        return cls(landmark=landmark, interplayer=interplayer)


# ---------------------------------------------------------------------------
# Covariances
# ---------------------------------------------------------------------------

_COV_DIMS = {
    "sigma_f": STATE_DIM,     # dynamics residual
    "sigma_g": 2,             # state prior residual (lane offset, heading)
    "sigma_g_hat": 1,         # control prior residual (yaw rate)
    "sigma_h": 2,             # landmark measurement (range, bearing)
    "sigma_h_bar": 2,         # inter-player measurement (planar, body frame)
    "sigma_b": 1,             # interaction residual (inverse distance)
}


def _as_covariance(name: str, value, dim: int) -> np.ndarray:
    """Accept a scalar (isotropic), 1-D list (diagonal) or full matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        mat = np.eye(dim) * float(arr)
    elif arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ScenarioError(f"{name}: expected {dim} diagonal entries, got {arr.shape[0]}")
        mat = np.diag(arr)
    elif arr.ndim == 2:
        if arr.shape != (dim, dim):
            raise ScenarioError(f"{name}: expected a {dim}x{dim} matrix, got {arr.shape}")
        mat = arr.copy()
    else:
        raise ScenarioError(f"{name}: cannot interpret array of dimension {arr.ndim}")
    return mat


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Symmetric positive definite covariance matrices for every factor family."""

    sigma_f: np.ndarray
    sigma_g: np.ndarray
    sigma_g_hat: np.ndarray
    sigma_h: np.ndarray
    sigma_h_bar: np.ndarray
    sigma_b: np.ndarray

    def __post_init__(self):
        for name, dim in _COV_DIMS.items():
            mat = _as_covariance(name, getattr(self, name), dim)
            object.__setattr__(self, name, mat)
        self.validate()

    def validate(self) -> None:
        for name in _COV_DIMS:
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ScenarioError(f"{name} is not symmetric")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise ScenarioError(f"{name} is not positive definite") from None

    def by_kind(self, kind: str) -> np.ndarray:
        return getattr(self, _KIND_TO_COV[kind])

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in _COV_DIMS}

    def __eq__(self, other):
        if not isinstance(other, CovarianceSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in _COV_DIMS)


_KIND_TO_COV = {
    "prior_state": "sigma_g",
    "prior_control": "sigma_g_hat",
    "dynamics": "sigma_f",
    "interaction": "sigma_b",
    "landmark_meas": "sigma_h",
    "interplayer_meas": "sigma_h_bar",
}


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

INTERPLAYER_MODES = ("both", "ego_only")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Full problem definition for one multi-player estimation game.

    Immutable after construction; derive variants with
    :func:`dataclasses.replace`.
    """

    num_players: int
    horizon: int
    dt: float
    speed: float
    landmarks: np.ndarray          # (N_l, 2)
    lane_targets: np.ndarray       # (N,)
    initial_states: np.ndarray     # (N, 3), fixed, never estimated
    covariances: CovarianceSet
    ibr_max_iterations: int = 50
    ibr_tolerance: float = 1e-4
    noise_std: float = 0.5
    interplayer_mode: str = "both"
    name: str = ""

    def __post_init__(self):
        landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, LANDMARK_DIM)
        lane_targets = np.asarray(self.lane_targets, dtype=float).reshape(-1)
        initial_states = np.asarray(self.initial_states, dtype=float).reshape(-1, STATE_DIM)
        for arr in (landmarks, lane_targets, initial_states):
            arr.setflags(write=False)
        object.__setattr__(self, "landmarks", landmarks)
        object.__setattr__(self, "lane_targets", lane_targets)
        object.__setattr__(self, "initial_states", initial_states)
        self.validate()

    @property
    def num_landmarks(self) -> int:
        return self.landmarks.shape[0]

    def validate(self) -> None:
        if self.num_players < 1:
            raise ScenarioError("num_players must be >= 1")
        if self.horizon < 1:
            raise ScenarioError("horizon must be >= 1")
        if not self.dt > 0:
            raise ScenarioError("dt must be > 0")
        if not self.speed > 0:
            raise ScenarioError("speed must be > 0")
        if self.lane_targets.shape[0] != self.num_players:
            raise ScenarioError(
                f"lane_targets has {self.lane_targets.shape[0]} entries for "
                f"{self.num_players} players"
            )
        if self.initial_states.shape[0] != self.num_players:
            raise ScenarioError(
                f"initial_states has {self.initial_states.shape[0]} entries for "
                f"{self.num_players} players"
            )
        if self.ibr_max_iterations < 0:
            raise ScenarioError("ibr max_iterations must be >= 0")
        if not self.ibr_tolerance > 0:
            raise ScenarioError("ibr tolerance must be > 0")
        if not self.noise_std > 0:
            raise ScenarioError("noise_std must be > 0")
        if self.interplayer_mode not in INTERPLAYER_MODES:
            raise ScenarioError(f"interplayer_mode must be one of {INTERPLAYER_MODES}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_players": self.num_players,
            "horizon": self.horizon,
            "dt": self.dt,
            "speed": self.speed,
            "landmarks": self.landmarks.tolist(),
            "lane_targets": self.lane_targets.tolist(),
            "initial_states": self.initial_states.tolist(),
            "covariances": self.covariances.to_dict(),
            "ibr": {"max_iterations": self.ibr_max_iterations, "tolerance": self.ibr_tolerance},
            "noise_std": self.noise_std,
            "interplayer_mode": self.interplayer_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            cov = CovarianceSet(**d["covariances"])
            ibr = d.get("ibr", {})
            return cls(
                num_players=int(d["num_players"]),
                horizon=int(d["horizon"]),
                dt=float(d["dt"]),
                speed=float(d["speed"]),
                landmarks=d.get("landmarks", []),
                lane_targets=d["lane_targets"],
                initial_states=d["initial_states"],
                covariances=cov,
                ibr_max_iterations=int(ibr.get("max_iterations", 50)),
                ibr_tolerance=float(ibr.get("tolerance", 1e-4)),
                noise_std=float(d.get("noise_std", 0.5)),
                interplayer_mode=d.get("interplayer_mode", "both"),
                name=d.get("name", ""),
            )
        except KeyError as exc:
            raise ScenarioError(f"missing required field {exc.args[0]!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.num_players == other.num_players
            and self.horizon == other.horizon
            and self.dt == other.dt
            and self.speed == other.speed
            and np.array_equal(self.landmarks, other.landmarks)
            and np.array_equal(self.lane_targets, other.lane_targets)
            and np.array_equal(self.initial_states, other.initial_states)
            and self.covariances == other.covariances
            and self.ibr_max_iterations == other.ibr_max_iterations
            and self.ibr_tolerance == other.ibr_tolerance
            and self.noise_std == other.noise_std
            and self.interplayer_mode == other.interplayer_mode
        )


SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gtpslam scenario",
    "type": "object",
    "required": [
        "num_players", "horizon", "dt", "speed",
        "lane_targets", "initial_states", "covariances",
    ],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "num_players": {"type": "integer", "minimum": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "speed": {"type": "number", "exclusiveMinimum": 0},
        "landmarks": {
            "type": "array",
            "items": {
                "type": "array", "items": {"type": "number"},
                "minItems": 2, "maxItems": 2,
            },
        },
        "lane_targets": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "initial_states": {
            "type": "array",
            "items": {
                "type": "array", "items": {"type": "number"},
                "minItems": 3, "maxItems": 3,
            },
            "minItems": 1,
        },
        "covariances": {
            "type": "object",
            "required": ["sigma_f", "sigma_g", "sigma_g_hat", "sigma_h", "sigma_h_bar", "sigma_b"],
            "additionalProperties": False,
            "properties": {
                name: {
                    "anyOf": [
                        {"type": "number"},
                        {"type": "array", "items": {"type": "number"}},
                        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                    ]
                }
                for name in _COV_DIMS
            },
        },
        "ibr": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 0},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "noise_std": {"type": "number", "exclusiveMinimum": 0},
        "interplayer_mode": {"enum": list(INTERPLAYER_MODES)},
    },
}


def load_scenario(path) -> Scenario:
    """Load and validate a scenario from a JSON file.

    Raises :class:`ScenarioError` with the offending field (or line/column
    for malformed JSON).
    """
    import jsonschema

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: field {where}: {exc.message}") from None
    return Scenario.from_dict(raw)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Variable layout
# ---------------------------------------------------------------------------


class VariableLayout:
    """Block layout of all estimation variables in one flat vector.

    Blocks are keyed by ``("x", player, stage)`` for states,
    ``("u", player, stage)`` for controls and ``("l", index)`` for
    landmarks.  Blocks are disjoint and cover the vector exactly; the
    ordering is all states then all controls per player, players in order,
    landmarks last.
    """

    def __init__(self, num_players: int, horizon: int, num_landmarks: int):
        self.num_players = num_players
        self.horizon = horizon
        self.num_landmarks = num_landmarks
        self._offsets = {}
        off = 0
        for i in range(num_players):
            for k in range(horizon + 1):
                self._offsets[("x", i, k)] = off
                off += STATE_DIM
            for k in range(horizon):
                self._offsets[("u", i, k)] = off
                off += CONTROL_DIM
        for a in range(num_landmarks):
            self._offsets[("l", a)] = off
            off += LANDMARK_DIM
        self.dim = off

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "VariableLayout":
        return cls(scenario.num_players, scenario.horizon, scenario.num_landmarks)

    def block_dim(self, key) -> int:
        return {"x": STATE_DIM, "u": CONTROL_DIM, "l": LANDMARK_DIM}[key[0]]

    def offset(self, key) -> int:
        return self._offsets[key]

    def slice_of(self, key) -> slice:
        off = self._offsets[key]
        return slice(off, off + self.block_dim(key))

    def blocks(self):
        return self._offsets.keys()

    def state(self, v: np.ndarray, i: int, k: int) -> np.ndarray:
        return v[self.slice_of(("x", i, k))]

    def control(self, v: np.ndarray, i: int, k: int) -> float:
        return v[self._offsets[("u", i, k)]]

    def landmark(self, v: np.ndarray, a: int) -> np.ndarray:
        return v[self.slice_of(("l", a))]

    def player_state_indices(self, i: int) -> np.ndarray:
        """Indices of all state entries of player i, stage order."""
        idx = []
        for k in range(self.horizon + 1):
            off = self._offsets[("x", i, k)]
            idx.extend(range(off, off + STATE_DIM))
        return np.asarray(idx, dtype=int)

    def player_indices(self, i: int) -> np.ndarray:
        """Indices of all state and control entries of player i."""
        idx = list(self.player_state_indices(i))
        for k in range(self.horizon):
            idx.append(self._offsets[("u", i, k)])
        return np.asarray(idx, dtype=int)

    def landmark_indices(self) -> np.ndarray:
        idx = []
        for a in range(self.num_landmarks):
            off = self._offsets[("l", a)]
            idx.extend(range(off, off + LANDMARK_DIM))
        return np.asarray(idx, dtype=int)

    def theta_indices(self) -> np.ndarray:
        """Indices of every heading entry, for re-wrapping after updates."""
        idx = [
            self._offsets[("x", i, k)] + 2
            for i in range(self.num_players)
            for k in range(self.horizon + 1)
        ]
        return np.asarray(idx, dtype=int)

    def pack(self, trajectories, landmarks=None) -> np.ndarray:
        """Assemble a flat vector from per-player trajectories and landmarks."""
        v = np.zeros(self.dim)
        for traj in trajectories:
            i = traj.player_id
            for k in range(self.horizon + 1):
                v[self.slice_of(("x", i, k))] = traj.states[k]
            for k in range(self.horizon):
                v[self._offsets[("u", i, k)]] = traj.controls[k]
        if landmarks is not None:
            for a in range(self.num_landmarks):
                v[self.slice_of(("l", a))] = np.asarray(landmarks)[a]
        return v

    def unpack(self, v: np.ndarray):
        """Split a flat vector into (trajectories, landmarks)."""
        trajectories = []
        for i in range(self.num_players):
            states = np.stack([self.state(v, i, k) for k in range(self.horizon + 1)])
            controls = np.array([self.control(v, i, k) for k in range(self.horizon)])
            trajectories.append(Trajectory(player_id=i, states=states, controls=controls))
        landmarks = np.array(
            [self.landmark(v, a) for a in range(self.num_landmarks)]
        ).reshape(self.num_landmarks, LANDMARK_DIM)
        return trajectories, landmarks

    def check_partition(self) -> None:
        """Assert blocks are disjoint and cover [0, dim) exactly."""
        seen = np.zeros(self.dim, dtype=int)
        for key in self._offsets:
            seen[self.slice_of(key)] += 1
        if not np.all(seen == 1):
            raise AssertionError("layout blocks do not partition the variable vector")
