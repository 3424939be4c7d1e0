"""Per-player estimation problems, the shared potential, and iterated best response.

Each player's objective is a weighted least-squares sum over their own
prior/dynamics factors plus coupling terms shared with other players.
The coupling terms are symmetric between the two players of a pair and
are counted once in the potential, which makes a unilateral change in one
player's variables move that player's objective and the potential by
exactly the same amount.  Iterated best response therefore descends one
scalar potential and stops at a local equilibrium.

Conventions: player 0 is the ego player, the only one with landmark
measurements.  Initial states (stage 0) are fixed for every player and
never optimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EGO, MeasurementSet, Scenario, VariableLayout, wrap_angle
from .graph import Factor, FactorGraph, SolveReport, solve_lm, whitener
from .models import dubins_step


def factor_whiteners(cov_set) -> dict:
    """Whitening matrices for every factor kind, from a covariance set."""
    return {
        "prior_state": whitener(cov_set.sigma_g),
        "prior_control": whitener(cov_set.sigma_g_hat),
        "dynamics": whitener(cov_set.sigma_f),
        "landmark_meas": whitener(cov_set.sigma_h),
        "interplayer_meas": whitener(cov_set.sigma_h_bar),
        "interaction": whitener(cov_set.sigma_b),
    }


# ---------------------------------------------------------------------------
# Factor builders.  All iterate stages in a fixed order so that factor
# lists are reproducible across runs.
# ---------------------------------------------------------------------------


def own_factors(scn: Scenario, i: int, W: dict) -> list:
    """Player i's private factors: state priors, control priors, dynamics.

    One of each per stage 0..K-1; the terminal state has no prior and is
    constrained only through the last dynamics factor.
    """
    out = []
    lane = float(scn.lane_targets[i])
    for k in range(scn.horizon):
        out.append(Factor("prior_state", (("x", i, k),), W["prior_state"],
                          {"lane_target": lane}))
        out.append(Factor("prior_control", (("u", i, k),), W["prior_control"], {}))
        out.append(Factor("dynamics", (("x", i, k), ("u", i, k), ("x", i, k + 1)),
                          W["dynamics"], {"dt": scn.dt, "speed": scn.speed}))
    return out


def interaction_factors(scn: Scenario, i: int, j: int, W: dict) -> list:
    """Inverse-distance coupling between players i and j at stages 0..K-1."""
    return [
        Factor("interaction", (("x", i, k), ("x", j, k)), W["interaction"])
        for k in range(scn.horizon)
    ]


def interplayer_meas_factors(meas: MeasurementSet, i: int, j: int, W: dict) -> list:
    """Measurement factors for the unordered pair {i, j}, both directions."""
    out = []
    for (k, a, b), z in sorted(meas.interplayer.items()):
        if {a, b} == {i, j}:
            out.append(Factor("interplayer_meas", (("x", a, k), ("x", b, k)),
                              W["interplayer_meas"], {"z": np.asarray(z, dtype=float)}))
    return out


def pair_factors(scn: Scenario, meas: MeasurementSet, i: int, j: int, W: dict) -> list:
    """The full coupling term between players i and j.

    Contains every inter-player measurement of the pair regardless of
    which player observed, plus the interaction factors.  Both players'
    problems include this same set, and the potential counts it once;
    that symmetry is what the equilibrium guarantee rests on.
    """
    return interplayer_meas_factors(meas, i, j, W) + interaction_factors(scn, i, j, W)


def landmark_meas_factors(meas: MeasurementSet, W: dict) -> list:
    return [
        Factor("landmark_meas", (("x", EGO, k), ("l", a)), W["landmark_meas"],
               {"z": np.asarray(z, dtype=float)})
        for (k, a), z in sorted(meas.landmark.items())
    ]


def owned_blocks(scn: Scenario, meas: MeasurementSet, i: int) -> frozenset:
    """Blocks player i optimizes: states 1..K, all controls, landmarks if ego.

    Stage-0 states are the game's fixed initial condition.  Landmark
    blocks are owned by the ego player but only those with at least one
    measurement; an unmeasured landmark has no factor and would make the
    system singular.
    """
    keys = [("x", i, k) for k in range(1, scn.horizon + 1)]
    keys += [("u", i, k) for k in range(scn.horizon)]
    if i == EGO:
        keys += [("l", a) for a in sorted(meas.measured_landmarks())]
    return frozenset(keys)


@dataclass
class PlayerProblem:
    """One player's objective graph; foreign blocks appear only frozen."""

    player_id: int
    graph: FactorGraph
    owned_keys: frozenset


def build_player_problem(scn: Scenario, meas: MeasurementSet, player_id: int) -> PlayerProblem:
    """Assemble player ``player_id``'s objective over the scenario layout.

    The ego problem carries landmark measurement factors and owns the
    measured landmark blocks; non-ego problems never do.  Pair coupling
    factors are included for every pair containing the player.
    """
    if not 0 <= player_id < scn.num_players:
        raise ValueError(f"unknown player id {player_id} for {scn.num_players} players")
    meas.validate(scn.num_players, scn.horizon, scn.num_landmarks)
    layout = VariableLayout.for_scenario(scn)
    W = factor_whiteners(scn.covariances)
    factors = own_factors(scn, player_id, W)
    if player_id == EGO:
        factors += landmark_meas_factors(meas, W)
    for j in range(scn.num_players):
        if j == player_id:
            continue
        a, b = min(player_id, j), max(player_id, j)
        factors += pair_factors(scn, meas, a, b, W)
    owned = owned_blocks(scn, meas, player_id)
    return PlayerProblem(player_id, FactorGraph(layout, factors, owned), owned)


def evaluate_cost(problem: PlayerProblem, all_vars: np.ndarray) -> float:
    """The player's full objective value, frozen-block terms included."""
    return problem.graph.cost(all_vars)


def build_potential_graph(scn: Scenario, meas: MeasurementSet) -> FactorGraph:
    """All players' private factors plus each pair's coupling term once."""
    meas.validate(scn.num_players, scn.horizon, scn.num_landmarks)
    layout = VariableLayout.for_scenario(scn)
    W = factor_whiteners(scn.covariances)
    factors = []
    for i in range(scn.num_players):
        factors += own_factors(scn, i, W)
    factors += landmark_meas_factors(meas, W)
    for i in range(scn.num_players):
        for j in range(i + 1, scn.num_players):
            factors += pair_factors(scn, meas, i, j, W)
    free = set()
    for i in range(scn.num_players):
        free |= owned_blocks(scn, meas, i)
    return FactorGraph(layout, factors, free)


def evaluate_potential(scn: Scenario, meas: MeasurementSet, all_vars: np.ndarray) -> float:
    return build_potential_graph(scn, meas).cost(all_vars)


def _deviation_support(scn: Scenario, layout: VariableLayout, r: int) -> np.ndarray:
    idx = list(layout.player_indices(r))
    if r == EGO:
        idx += list(layout.landmark_indices())
    return np.asarray(sorted(idx), dtype=int)


def potential_identity_check(scn, meas, base_vars, r: int, deviation: np.ndarray):
    """Change in player r's objective vs. change in the potential under a
    unilateral deviation of player r's variables.

    Returns ``(dL, dp)``; these agree to solver precision because the
    pair terms are symmetric and counted once.  Raises ``ValueError`` if
    the deviation touches any other player's blocks (or the landmarks,
    for a non-ego player).
    """
    if not 0 <= r < scn.num_players:
        raise ValueError(f"unknown player id {r}")
    layout = VariableLayout.for_scenario(scn)
    deviation = np.asarray(deviation, dtype=float)
    if deviation.shape != (layout.dim,):
        raise ValueError(f"deviation must have shape ({layout.dim},)")
    allowed = np.zeros(layout.dim, dtype=bool)
    allowed[_deviation_support(scn, layout, r)] = True
    touched = np.nonzero(deviation)[0]
    foreign = [int(t) for t in touched if not allowed[t]]
    if foreign:
        raise ValueError(f"deviation touches blocks not owned by player {r}: "
                         f"indices {foreign[:5]}")
    problem = build_player_problem(scn, meas, r)
    potential = build_potential_graph(scn, meas)
    v1 = base_vars + deviation
    dL = problem.graph.cost(v1) - problem.graph.cost(base_vars)
    dp = potential.cost(v1) - potential.cost(base_vars)
    return dL, dp


# ---------------------------------------------------------------------------
# Iterated best response
# ---------------------------------------------------------------------------


@dataclass
class IbrUpdate:
    """One player's solve within one IBR round."""

    round: int
    player: int
    cost_before: float
    cost_after: float
    potential: float      # potential value after this update


@dataclass
class GameSolution:
    variables: np.ndarray
    trajectories: list
    landmarks: np.ndarray
    ibr_iterations: int
    converged: bool
    updates: list = field(default_factory=list)
    report: SolveReport | None = None   # set by the single-solve baseline
    diagnostics: dict = field(default_factory=dict)

    def potential_values(self):
        return [u.potential for u in self.updates]

    def player_costs(self, i: int):
        return [(u.round, u.cost_before, u.cost_after) for u in self.updates if u.player == i]

    def trace_rows(self):
        """Iteration trace as flat dicts, one per player update."""
        return [
            {"round": u.round, "player": u.player, "cost_before": u.cost_before,
             "cost_after": u.cost_after, "potential": u.potential}
            for u in self.updates
        ]


class IbrAbort(RuntimeError):
    """A player's inner solve failed hard; carries where and why."""

    def __init__(self, player: int, round_: int, report: SolveReport):
        super().__init__(
            f"best-response solve for player {player} in round {round_} "
            f"terminated with {report.termination}"
        )
        self.player = player
        self.round = round_
        self.report = report


def _player_displacement(layout, i, v_new, v_old):
    idx = layout.player_state_indices(i)
    d = v_new[idx] - v_old[idx]
    # heading entries are every third component of the state stack
    d[2::3] = wrap_angle(d[2::3])
    return float(np.linalg.norm(d))


def solve_ibr(scn: Scenario, meas: MeasurementSet, init_vars: np.ndarray, order=None):
    """Round-robin best responses until no player's states move.

    Each round the ego player re-solves jointly for their trajectory and
    the landmarks, then every other player re-solves their own trajectory,
    all against the latest iterate.  Convergence: every player's stacked
    state displacement (heading differences wrapped) drops below the
    scenario tolerance.  Returns the last iterate either way, with the
    ``converged`` flag and the full update trace.

    ``order`` permutes the within-round update sequence (default: ego
    first, then ascending id).  Raises :class:`IbrAbort` if any inner
    solve ends with ``lambda_overflow``.
    """
    layout = VariableLayout.for_scenario(scn)
    v = np.array(init_vars, dtype=float, copy=True)
    if v.shape != (layout.dim,):
        raise ValueError(f"init_vars must have shape ({layout.dim},)")
    for i in range(scn.num_players):
        if not np.allclose(layout.state(v, i, 0), scn.initial_states[i], atol=1e-12):
            raise ValueError(
                f"init_vars stage-0 state of player {i} does not match the scenario"
            )
    if order is None:
        order = list(range(scn.num_players))
    if sorted(order) != list(range(scn.num_players)):
        raise ValueError(f"order must be a permutation of all player ids, got {order}")

    problems = [build_player_problem(scn, meas, i) for i in range(scn.num_players)]
    potential = build_potential_graph(scn, meas)

    updates = []
    converged = False
    rounds = 0
    for q in range(1, scn.ibr_max_iterations + 1):
        v_prev = v.copy()
        for i in order:
            prob = problems[i]
            cost_before = prob.graph.cost(v)
            v_next, report = solve_lm(prob.graph, v)
            if report.termination == "lambda_overflow":
                raise IbrAbort(i, q, report)
            v = v_next
            updates.append(IbrUpdate(q, i, cost_before, prob.graph.cost(v),
                                     potential.cost(v)))
        rounds = q
        disp = max(
            _player_displacement(layout, i, v, v_prev) for i in range(scn.num_players)
        )
        if disp < scn.ibr_tolerance:
            converged = True
            break

    trajectories, landmarks = layout.unpack(v)
    return GameSolution(
        variables=v,
        trajectories=trajectories,
        landmarks=landmarks,
        ibr_iterations=rounds,
        converged=converged,
        updates=updates,
    )


# ---------------------------------------------------------------------------
# Equilibrium check
# ---------------------------------------------------------------------------


@dataclass
class NashPlayerCheck:
    player_id: int
    base_cost: float
    worst_decrease: float   # largest cost drop any probe achieved (can be <= 0)
    tolerance: float
    violated: bool


@dataclass
class NashReport:
    players: list
    num_probes: int
    probe_scale: float

    @property
    def passed(self) -> bool:
        return not any(p.violated for p in self.players)

    @property
    def worst(self):
        return max(self.players, key=lambda p: p.worst_decrease - p.tolerance)


def _residual_consistent_rollout(scn, layout, v, i, new_controls):
    """States for player i under deviated controls, keeping each stage's
    dynamics residual exactly as it is in ``v``."""
    states = np.stack([layout.state(v, i, k) for k in range(scn.horizon + 1)])
    residuals = []
    for k in range(scn.horizon):
        pred = dubins_step(states[k], layout.control(v, i, k), scn.dt, scn.speed)
        r = states[k + 1] - pred
        r[2] = wrap_angle(r[2])
        residuals.append(r)
    out = np.empty_like(states)
    out[0] = states[0]
    for k in range(scn.horizon):
        pred = dubins_step(out[k], new_controls[k], scn.dt, scn.speed)
        nxt = pred + residuals[k]
        nxt[2] = wrap_angle(nxt[2])
        out[k + 1] = nxt
    return out


def nash_check(scn, meas, vars_, num_probes: int = 100, probe_scale: float = 1e-3,
               seed: int = 0) -> NashReport:
    """Probe for profitable unilateral control deviations near a candidate.

    For each player, random control perturbations of norm ``probe_scale``
    are applied; the player's states are re-rolled so every stage keeps
    its current dynamics residual (otherwise the probe would be charged
    for dynamics violations that are an artifact of the probe itself).
    A player is violated if some probe lowers their objective by more
    than ``1e-6 * (1 + |L^i|)``.  This is a local check by construction.
    """
    layout = VariableLayout.for_scenario(scn)
    rng = np.random.default_rng(seed)
    checks = []
    for i in range(scn.num_players):
        prob = build_player_problem(scn, meas, i)
        base = prob.graph.cost(vars_)
        tol = 1e-6 * (1.0 + abs(base))
        worst = -np.inf
        u_idx = [layout.offset(("u", i, k)) for k in range(scn.horizon)]
        for _ in range(num_probes):
            delta = rng.normal(size=scn.horizon)
            delta *= probe_scale / np.linalg.norm(delta)
            v_probe = vars_.copy()
            new_u = v_probe[u_idx] + delta
            v_probe[u_idx] = new_u
            states = _residual_consistent_rollout(scn, layout, vars_, i, new_u)
            for k in range(scn.horizon + 1):
                v_probe[layout.slice_of(("x", i, k))] = states[k]
            worst = max(worst, base - prob.graph.cost(v_probe))
        checks.append(NashPlayerCheck(i, base, worst, tol, worst > tol))
    return NashReport(checks, num_probes, probe_scale)
