"""Vehicle, measurement, prior, and interaction models with analytic Jacobians.

Every model here is a plain function of ndarrays.  For each model ``m``
there is a companion returning the Jacobians with respect to each of its
variable arguments, reachable via :func:`jacobian_of`.  Angular outputs
(bearing, heading) live in (-pi, pi]; consumers differencing them must
wrap the difference.
"""

from __future__ import annotations

import numpy as np

from .core import wrap_angle

# Below this separation the raw models are singular; callers that need to
# evaluate near-coincident configurations must clamp before calling.
MIN_LANDMARK_RANGE = 1e-6
MIN_PLAYER_DISTANCE = 1e-9


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# Vehicle dynamics
# ---------------------------------------------------------------------------


def dubins_step(state, control, dt: float, speed: float) -> np.ndarray:
    """One Euler step of a constant-speed planar vehicle.

    Parameters
    ----------
    state : (3,) array
        Current ``(px, py, theta)``.
    control : float
        Yaw rate in rad/s.
    dt, speed : float
        Step length in seconds and forward speed in m/s.

    Returns
    -------
    (3,) array with the heading wrapped to (-pi, pi].
    """
    px, py, theta = state
    omega = float(np.asarray(control).reshape(()))
    return np.array([
        px + speed * np.cos(theta) * dt,
        py + speed * np.sin(theta) * dt,
        wrap_angle(theta + omega * dt),
    ])


def dubins_step_jacobian(state, control, dt: float, speed: float):
    """Jacobians of :func:`dubins_step` w.r.t. state (3x3) and control (3x1)."""
    theta = state[2]
    A = np.array([
        [1.0, 0.0, -speed * np.sin(theta) * dt],
        [0.0, 1.0, speed * np.cos(theta) * dt],
        [0.0, 0.0, 1.0],
    ])
    B = np.array([[0.0], [0.0], [dt]])
    return A, B


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


def landmark_meas(state, landmark) -> np.ndarray:
    """Range and relative bearing from a pose to a planar landmark.

    The bearing is measured in the vehicle frame (zero when the landmark is
    dead ahead) and wrapped to (-pi, pi].  Raises ``ValueError`` if the
    landmark is closer than ``MIN_LANDMARK_RANGE``.
    """
    d = np.asarray(landmark, dtype=float) - np.asarray(state[:2], dtype=float)
    r = np.hypot(d[0], d[1])
    if r < MIN_LANDMARK_RANGE:
        raise ValueError(f"landmark range {r:.3e} below minimum {MIN_LANDMARK_RANGE:.1e}")
    bearing = wrap_angle(np.arctan2(d[1], d[0]) - state[2])
    return np.array([r, bearing])


def landmark_meas_jacobian(state, landmark):
    """Jacobians of :func:`landmark_meas` w.r.t. pose (2x3) and landmark (2x2)."""
    d = np.asarray(landmark, dtype=float) - np.asarray(state[:2], dtype=float)
    q = d @ d
    r = np.sqrt(q)
    if r < MIN_LANDMARK_RANGE:
        raise ValueError(f"landmark range {r:.3e} below minimum {MIN_LANDMARK_RANGE:.1e}")
    dx, dy = d
    H_x = np.array([
        [-dx / r, -dy / r, 0.0],
        [dy / q, -dx / q, -1.0],
    ])
    H_l = np.array([
        [dx / r, dy / r],
        [-dy / q, dx / q],
    ])
    return H_x, H_l


def interplayer_meas(state_i, state_j) -> np.ndarray:
    """Position of player j in player i's body frame, ``R(theta_i)^T (p_j - p_i)``."""
    d = np.asarray(state_j[:2], dtype=float) - np.asarray(state_i[:2], dtype=float)
    return _rot(state_i[2]).T @ d


def interplayer_meas_jacobian(state_i, state_j):
    """Jacobians of :func:`interplayer_meas` w.r.t. both poses (each 2x3)."""
    RT = _rot(state_i[2]).T
    out = RT @ (np.asarray(state_j[:2], dtype=float) - np.asarray(state_i[:2], dtype=float))
    H_i = np.zeros((2, 3))
    H_i[:, :2] = -RT
    H_i[:, 2] = [out[1], -out[0]]
    H_j = np.zeros((2, 3))
    H_j[:, :2] = RT
    return H_i, H_j


# ---------------------------------------------------------------------------
# Priors and interaction
# ---------------------------------------------------------------------------


def state_prior_residual(state, lane_target: float) -> np.ndarray:
    """Deviation of a pose from lane-keeping: lateral offset and heading error."""
    return np.array([state[1] - lane_target, wrap_angle(state[2])])


def state_prior_jacobian(state, lane_target: float):
    return (np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),)


def control_prior_residual(control) -> np.ndarray:
    """Deviation of a yaw rate from zero (straight, constant-heading driving)."""
    return np.atleast_1d(np.asarray(control, dtype=float)).reshape(1).copy()


def control_prior_jacobian(control):
    return (np.array([[1.0]]),)


def interaction_residual(state_i, state_j) -> float:
    """Inverse distance between two players' positions.

    Grows as the players close in, so penalizing it pushes trajectories
    apart.  Raises ``ValueError`` below ``MIN_PLAYER_DISTANCE``; soft
    clamping near coincidence is the caller's concern.
    """
    d = np.asarray(state_i[:2], dtype=float) - np.asarray(state_j[:2], dtype=float)
    dist = np.hypot(d[0], d[1])
    if dist < MIN_PLAYER_DISTANCE:
        raise ValueError(f"player distance {dist:.3e} below minimum {MIN_PLAYER_DISTANCE:.1e}")
    return 1.0 / dist


def interaction_jacobian(state_i, state_j):
    """Jacobians of :func:`interaction_residual` w.r.t. both poses (each 1x3)."""
    d = np.asarray(state_i[:2], dtype=float) - np.asarray(state_j[:2], dtype=float)
    dist = np.hypot(d[0], d[1])
    if dist < MIN_PLAYER_DISTANCE:
        raise ValueError(f"player distance {dist:.3e} below minimum {MIN_PLAYER_DISTANCE:.1e}")
    g = d / dist**3
    D_i = np.array([[-g[0], -g[1], 0.0]])
    D_j = np.array([[g[0], g[1], 0.0]])
    return D_i, D_j


_JACOBIANS = {
    dubins_step: dubins_step_jacobian,
    landmark_meas: landmark_meas_jacobian,
    interplayer_meas: interplayer_meas_jacobian,
    state_prior_residual: state_prior_jacobian,
    control_prior_residual: control_prior_jacobian,
    interaction_residual: interaction_jacobian,
}


def jacobian_of(model):
    """Return the analytic-Jacobian companion of a model function."""
    try:
        return _JACOBIANS[model]
    except KeyError:
        raise KeyError(f"no Jacobian registered for {getattr(model, '__name__', model)!r}") from None
