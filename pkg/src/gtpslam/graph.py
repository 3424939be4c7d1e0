"""Factor graph over block variables and a Levenberg-Marquardt solver.

A factor couples a few variable blocks of a :class:`VariableLayout` and
contributes ``|| W r(v) ||^2`` to the graph cost, where ``W`` is the
inverse Cholesky factor of the factor's covariance.  Graphs distinguish
free from frozen blocks: residuals always read the full vector, but only
free blocks get Jacobian columns and only they move during a solve.

Factor kinds and their block keys:

==================  =======================================  ==========
kind                keys                                     residual
==================  =======================================  ==========
prior_state         (x_ik,)                                  lane/heading deviation
prior_control       (u_ik,)                                  yaw rate
dynamics            (x_ik, u_ik, x_ik+1)                     one-step rollout error
landmark_meas       (x_ik, l_a)                              range/bearing error
interplayer_meas    (x_ik, x_jk)                             body-frame offset error
interaction         (x_ik, x_jk)                             inverse distance
anchor_state        (x_ik,)                                  full-state tie to a reference
==================  =======================================  ==========
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_triangular

from . import models
from .core import VariableLayout, wrap_angle

# Interaction factors saturate below this separation so the cost stays
# finite if iterates drive two players together.
INTERACTION_CLAMP_DISTANCE = 1e-3

FACTOR_KINDS = (
    "prior_state",
    "prior_control",
    "dynamics",
    "landmark_meas",
    "interplayer_meas",
    "interaction",
    "anchor_state",
)


def whitener(cov: np.ndarray) -> np.ndarray:
    """Inverse Cholesky factor W of a covariance, so ||W r||^2 = r^T cov^-1 r."""
    C = np.linalg.cholesky(np.asarray(cov, dtype=float))
    return solve_triangular(C, np.eye(C.shape[0]), lower=True)


@dataclass(frozen=True)
class Factor:
    kind: str
    keys: tuple
    sqrt_info: np.ndarray
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ValueError(f"unknown factor kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]


# --- residual/Jacobian evaluation per kind ---------------------------------


def _eval_prior_state(f, lay, v, want_jac):
    x = lay.state(v, *f.keys[0][1:])
    r = models.state_prior_residual(x, f.data["lane_target"])
    if not want_jac:
        return r, None
    (G,) = models.state_prior_jacobian(x, f.data["lane_target"])
    return r, {f.keys[0]: G}


def _eval_prior_control(f, lay, v, want_jac):
    u = lay.control(v, *f.keys[0][1:])
    r = models.control_prior_residual(u)
    if not want_jac:
        return r, None
    return r, {f.keys[0]: np.array([[1.0]])}


def _eval_dynamics(f, lay, v, want_jac):
    kx, ku, kx1 = f.keys
    x = lay.state(v, *kx[1:])
    u = lay.control(v, *ku[1:])
    x1 = lay.state(v, *kx1[1:])
    pred = models.dubins_step(x, u, f.data["dt"], f.data["speed"])
    r = x1 - pred
    r[2] = wrap_angle(r[2])
    if not want_jac:
        return r, None
    A, B = models.dubins_step_jacobian(x, u, f.data["dt"], f.data["speed"])
    return r, {kx: -A, ku: -B, kx1: np.eye(3)}


def _eval_landmark(f, lay, v, want_jac):
    kx, kl = f.keys
    x = lay.state(v, *kx[1:])
    l = lay.landmark(v, kl[1])
    r = models.landmark_meas(x, l) - f.data["z"]
    r[1] = wrap_angle(r[1])
    if not want_jac:
        return r, None
    H_x, H_l = models.landmark_meas_jacobian(x, l)
    return r, {kx: H_x, kl: H_l}


def _eval_interplayer(f, lay, v, want_jac):
    ki, kj = f.keys
    xi = lay.state(v, *ki[1:])
    xj = lay.state(v, *kj[1:])
    r = models.interplayer_meas(xi, xj) - f.data["z"]
    if not want_jac:
        return r, None
    H_i, H_j = models.interplayer_meas_jacobian(xi, xj)
    return r, {ki: H_i, kj: H_j}


def _eval_interaction(f, lay, v, want_jac):
    ki, kj = f.keys
    xi = lay.state(v, *ki[1:])
    xj = lay.state(v, *kj[1:])
    d = xi[:2] - xj[:2]
    dist = np.hypot(d[0], d[1])
    if dist >= INTERACTION_CLAMP_DISTANCE:
        r = np.array([1.0 / dist])
        if not want_jac:
            return r, None
        D_i, D_j = models.interaction_jacobian(xi, xj)
        return r, {ki: D_i, kj: D_j}
    # saturated: constant value, gradient of the linear continuation
    r = np.array([1.0 / INTERACTION_CLAMP_DISTANCE])
    if not want_jac:
        return r, None
    if dist > 0.0:
        g = (d / dist) / INTERACTION_CLAMP_DISTANCE**2
    else:
        g = np.zeros(2)
    D_i = np.array([[-g[0], -g[1], 0.0]])
    return r, {ki: D_i, kj: -D_i}


def _eval_anchor(f, lay, v, want_jac):
    # full-state tie to a reference; used as a weak regularizer on blocks
    # nothing else constrains
    x = lay.state(v, *f.keys[0][1:])
    r = x - f.data["x_ref"]
    r[2] = wrap_angle(r[2])
    if not want_jac:
        return r, None
    return r, {f.keys[0]: np.eye(3)}


_EVALUATORS = {
    "anchor_state": _eval_anchor,
    "prior_state": _eval_prior_state,
    "prior_control": _eval_prior_control,
    "dynamics": _eval_dynamics,
    "landmark_meas": _eval_landmark,
    "interplayer_meas": _eval_interplayer,
    "interaction": _eval_interaction,
}


def evaluate_factor(factor: Factor, layout: VariableLayout, v: np.ndarray, want_jac=True):
    """Whitened residual of one factor, optionally with per-key Jacobians."""
    r, jac = _EVALUATORS[factor.kind](factor, layout, v, want_jac)
    W = factor.sqrt_info
    wr = W @ r
    if jac is None:
        return wr, None
    return wr, {key: W @ J for key, J in jac.items()}


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


class FactorGraph:
    """A set of factors plus the designation of which blocks are free."""

    def __init__(self, layout: VariableLayout, factors=(), free_keys=()):
        self.layout = layout
        self.factors: list = list(factors)
        self.free_keys = frozenset(free_keys)
        for key in self.free_keys:
            if key not in layout._offsets:
                raise KeyError(f"free key {key} not in layout")

    def add(self, factor: Factor) -> None:
        self.factors.append(factor)

    def is_active(self, factor: Factor) -> bool:
        """A factor is active when at least one of its blocks is free."""
        return any(k in self.free_keys for k in factor.keys)

    def active_factors(self):
        return [f for f in self.factors if self.is_active(f)]

    def cost(self, v: np.ndarray) -> float:
        """Total whitened squared residual over ALL factors, active or not."""
        total = 0.0
        for f in self.factors:
            wr, _ = evaluate_factor(f, self.layout, v, want_jac=False)
            total += float(wr @ wr)
        return total

    def free_column_info(self):
        """Global indices of free entries and the map key -> local column slice."""
        cols = []
        col_of = {}
        off = 0
        for key in self.layout.blocks():
            if key in self.free_keys:
                s = self.layout.slice_of(key)
                dim = s.stop - s.start
                cols.extend(range(s.start, s.stop))
                col_of[key] = slice(off, off + dim)
                off += dim
        return np.asarray(cols, dtype=int), col_of

    def counts_by_kind(self) -> dict:
        out = {}
        for f in self.factors:
            out[f.kind] = out.get(f.kind, 0) + 1
        return out


def residual_and_jacobian(graph: FactorGraph, v: np.ndarray):
    """Stacked whitened residual and sparse Jacobian over the free blocks.

    Returns ``(r, J, free_cols)`` where ``r`` has one row per active-factor
    residual component in factor insertion order, ``J`` is CSR with one
    column per free entry, and ``free_cols`` gives each column's index in
    the full vector.
    """
    free_cols, col_of = graph.free_column_info()
    rows_r = []
    data, rows, cols = [], [], []
    row = 0
    for f in graph.factors:
        if not graph.is_active(f):
            continue
        wr, jac = evaluate_factor(f, graph.layout, v, want_jac=True)
        rows_r.append(wr)
        m = wr.shape[0]
        for key, J in jac.items():
            cs = col_of.get(key)
            if cs is None:
                continue  # frozen block: no columns
            n = cs.stop - cs.start
            rows.append(np.repeat(np.arange(row, row + m), n))
            cols.append(np.tile(np.arange(cs.start, cs.stop), m))
            data.append(np.asarray(J, dtype=float).ravel())
        row += m
    if rows_r:
        r = np.concatenate(rows_r)
    else:
        r = np.zeros(0)
    n_free = free_cols.shape[0]
    if data:
        J = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(row, n_free),
        ).tocsr()
    else:
        J = sp.csr_matrix((row, n_free))
    return r, J, free_cols


def lm_step(J, r, lam: float) -> np.ndarray:
    """Damped Gauss-Newton step: solve (J^T J + lam I) d = -J^T r."""
    n = J.shape[1]
    H = (J.T @ J).tocsc() + lam * sp.identity(n, format="csc")
    g = J.T @ r
    return spla.splu(H).solve(-g)


@dataclass
class SolveReport:
    termination: str      # converged_ftol | converged_xtol | converged_gradient |
                          # max_iterations | lambda_overflow | nothing_free
    converged: bool
    iterations: int       # accepted steps
    initial_cost: float   # active-factor cost at the start
    final_cost: float
    lambda_final: float
    gradient_norm: float


def solve_lm(
    graph: FactorGraph,
    v0: np.ndarray,
    max_iterations: int = 100,
    ftol: float = 1e-8,
    xtol: float = 1e-8,
    gtol: float = 1e-10,
    lambda_init: float = 1e-4,
    lambda_min: float = 1e-12,
    lambda_max: float = 1e12,
):
    """Minimize the graph's active cost over its free blocks.

    Returns ``(v, SolveReport)``.  ``v0`` is not modified.  Heading entries
    of free state blocks are re-wrapped after every accepted step.  Frozen
    blocks are bit-identical between input and output.
    """
    v = np.array(v0, dtype=float, copy=True)
    free_cols, _ = graph.free_column_info()
    theta_free = np.intersect1d(graph.layout.theta_indices(), free_cols)

    def active_cost(vec):
        total = 0.0
        for f in graph.factors:
            if not graph.is_active(f):
                continue
            wr, _ = evaluate_factor(f, graph.layout, vec, want_jac=False)
            total += float(wr @ wr)
        return total

    if free_cols.shape[0] == 0:
        c = active_cost(v)
        return v, SolveReport("nothing_free", True, 0, c, c, lambda_init, 0.0)

    r, J, _ = residual_and_jacobian(graph, v)
    cost = float(r @ r)
    initial_cost = cost
    g = J.T @ r
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if gnorm < gtol:
        return v, SolveReport("converged_gradient", True, 0, cost, cost, lambda_init, gnorm)

    lam = lambda_init
    iterations = 0
    termination = "max_iterations"
    converged = False
    while iterations < max_iterations:
        step = lm_step(J, r, lam)
        v_new = v.copy()
        v_new[free_cols] += step
        if theta_free.size:
            v_new[theta_free] = wrap_angle(v_new[theta_free])
        new_cost = active_cost(v_new)
        if new_cost < cost:
            step_norm = float(np.linalg.norm(step))
            ref_norm = float(np.linalg.norm(v[free_cols]))
            v = v_new
            iterations += 1
            lam = max(lam / 10.0, lambda_min)
            decrease = cost - new_cost
            cost = new_cost
            if decrease <= ftol * max(1.0, cost):
                termination, converged = "converged_ftol", True
                break
            if step_norm <= xtol * (ref_norm + xtol):
                termination, converged = "converged_xtol", True
                break
            r, J, _ = residual_and_jacobian(graph, v)
            g = J.T @ r
            gnorm = float(np.max(np.abs(g)))
            if gnorm < gtol:
                termination, converged = "converged_gradient", True
                break
        else:
            # step rejected; once damping has shrunk proposals below the
            # step tolerance the current point is as good as it gets
            if float(np.linalg.norm(step)) <= xtol * (float(np.linalg.norm(v[free_cols])) + xtol):
                termination, converged = "converged_xtol", True
                break
            lam *= 10.0
            if lam > lambda_max:
                termination, converged = "lambda_overflow", False
                break

    r_fin, J_fin, _ = residual_and_jacobian(graph, v)
    gnorm = float(np.max(np.abs(J_fin.T @ r_fin))) if r_fin.size else 0.0
    return v, SolveReport(
        termination=termination,
        converged=converged,
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=float(r_fin @ r_fin),
        lambda_final=lam,
        gradient_norm=gnorm,
    )
