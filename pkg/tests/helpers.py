"""Shared numeric oracles for the test suite.

Deliberately naive implementations: central finite differences for
Jacobians and a loop-over-terms cost evaluator.  They trade speed for
obviousness so the production code can be checked against them.
"""

import numpy as np

from gtpslam.core import wrap_angle


def _call_with(f, args, argnum, x):
    a = list(args)
    if np.ndim(args[argnum]) == 0:
        a[argnum] = float(x[0])
    else:
        a[argnum] = x
    return np.atleast_1d(np.asarray(f(*a), dtype=float))


def fd_jacobian(f, args, argnum, h=1e-6, angular_rows=()):
    """Central-difference Jacobian of f w.r.t. its argnum-th argument.

    ``angular_rows`` lists output components that are angles; their
    differences are wrapped so the estimate is correct across the branch
    cut at +-pi.
    """
    x0 = np.atleast_1d(np.asarray(args[argnum], dtype=float))
    y0 = _call_with(f, args, argnum, x0)
    J = np.zeros((y0.size, x0.size))
    for c in range(x0.size):
        xp = x0.copy()
        xp[c] += h
        xm = x0.copy()
        xm[c] -= h
        diff = _call_with(f, args, argnum, xp) - _call_with(f, args, argnum, xm)
        for r in angular_rows:
            diff[r] = wrap_angle(diff[r])
        J[:, c] = diff / (2.0 * h)
    return J


def naive_cost(entries, layout, v):
    """Loop-and-matrix-inverse evaluation of sum_i r_i^T inv(cov_i) r_i.

    ``entries`` is a list of (kind, keys, cov, data) tuples mirroring the
    production factor semantics, including the interaction clamp.
    """
    from gtpslam import models
    from gtpslam.graph import INTERACTION_CLAMP_DISTANCE

    total = 0.0
    for kind, keys, cov, data in entries:
        if kind == "prior_state":
            x = layout.state(v, *keys[0][1:])
            r = models.state_prior_residual(x, data["lane_target"])
        elif kind == "prior_control":
            r = np.array([layout.control(v, *keys[0][1:])])
        elif kind == "dynamics":
            x = layout.state(v, *keys[0][1:])
            u = layout.control(v, *keys[1][1:])
            x1 = layout.state(v, *keys[2][1:])
            r = x1 - models.dubins_step(x, u, data["dt"], data["speed"])
            r[2] = wrap_angle(r[2])
        elif kind == "landmark_meas":
            x = layout.state(v, *keys[0][1:])
            l = layout.landmark(v, keys[1][1])
            r = models.landmark_meas(x, l) - data["z"]
            r[1] = wrap_angle(r[1])
        elif kind == "interplayer_meas":
            xi = layout.state(v, *keys[0][1:])
            xj = layout.state(v, *keys[1][1:])
            r = models.interplayer_meas(xi, xj) - data["z"]
        elif kind == "anchor_state":
            x = layout.state(v, *keys[0][1:])
            r = x - data["x_ref"]
            r[2] = wrap_angle(r[2])
        elif kind == "interaction":
            xi = layout.state(v, *keys[0][1:])
            xj = layout.state(v, *keys[1][1:])
            dist = np.hypot(*(xi[:2] - xj[:2]))
            r = np.array([1.0 / max(dist, INTERACTION_CLAMP_DISTANCE)])
        else:
            raise ValueError(kind)
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        total += float(r @ np.linalg.inv(cov) @ r)
    return total


def random_pose(rng, span=20.0):
    return np.array([
        rng.uniform(-span, span),
        rng.uniform(-span, span),
        rng.uniform(-np.pi, np.pi),
    ])


def random_separated_poses(rng, min_dist=0.5, span=20.0):
    """Two poses whose positions are at least min_dist apart."""
    while True:
        a, b = random_pose(rng, span), random_pose(rng, span)
        if np.hypot(*(a[:2] - b[:2])) >= min_dist:
            return a, b
