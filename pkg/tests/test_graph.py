import numpy as np
import pytest

import gtpslam.graph as graph_mod
from gtpslam.core import VariableLayout, wrap_angle
from gtpslam.graph import (
    Factor,
    FactorGraph,
    evaluate_factor,
    lm_step,
    residual_and_jacobian,
    solve_lm,
    whitener,
)

from helpers import naive_cost

DT = 0.2
SPEED = 30.0


def W(cov):
    return whitener(np.atleast_2d(np.asarray(cov, dtype=float)))


def build_random_graph(rng, num_players=2, horizon=3, num_landmarks=2, free="all"):
    """A small graph with every factor kind, plus matching naive-cost entries."""
    lay = VariableLayout(num_players, horizon, num_landmarks)
    entries = []
    factors = []

    def add(kind, keys, cov, data):
        entries.append((kind, keys, cov, data))
        factors.append(Factor(kind, keys, W(cov), data))

    for i in range(num_players):
        for k in range(horizon):
            add("prior_state", (("x", i, k),), np.diag([1.0, 0.09]), {"lane_target": 3.7 * i})
            add("prior_control", (("u", i, k),), [[0.09]], {})
            add("dynamics", (("x", i, k), ("u", i, k), ("x", i, k + 1)),
                np.diag([0.02, 0.02, 0.004]), {"dt": DT, "speed": SPEED})
    for k in range(horizon):
        add("interplayer_meas", (("x", 0, k), ("x", 1, k)),
            0.25 * np.eye(2), {"z": rng.normal(size=2)})
        add("interplayer_meas", (("x", 1, k), ("x", 0, k)),
            0.25 * np.eye(2), {"z": rng.normal(size=2)})
        add("interaction", (("x", 0, k), ("x", 1, k)), [[0.04]], {})
        for a in range(num_landmarks):
            add("landmark_meas", (("x", 0, k), ("l", a)),
                np.diag([0.25, 0.01]), {"z": np.array([rng.uniform(5, 30), rng.uniform(-3, 3)])})

    free_keys = list(lay.blocks()) if free == "all" else free
    g = FactorGraph(lay, factors, free_keys)

    v = np.zeros(lay.dim)
    for i in range(num_players):
        for k in range(horizon + 1):
            v[lay.slice_of(("x", i, k))] = [6.0 * k + rng.normal(0, 0.5),
                                            3.7 * i + rng.normal(0, 0.5),
                                            rng.normal(0, 0.1)]
        for k in range(horizon):
            v[lay.offset(("u", i, k))] = rng.normal(0, 0.1)
    for a in range(num_landmarks):
        v[lay.slice_of(("l", a))] = [10.0 * a + 5.0, -5.0 + rng.normal(0, 1.0)]
    return g, entries, v


class TestWhitener:
    def test_known_diagonal(self):
        Wm = whitener(np.diag([4.0, 1.0]))
        assert np.allclose(Wm, np.diag([0.5, 1.0]))

    def test_whitened_norm_equals_mahalanobis(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + 3 * np.eye(3)
        r = rng.normal(size=3)
        Wm = whitener(cov)
        assert np.isclose((Wm @ r) @ (Wm @ r), r @ np.linalg.inv(cov) @ r, rtol=1e-10)


class TestFactorBasics:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            Factor("loop_closure", (("x", 0, 0),), np.eye(2))

    def test_prior_cost_example(self):
        # lateral offset of 2 with variance 4 contributes exactly 1
        lay = VariableLayout(1, 1, 0)
        f = Factor("prior_state", (("x", 0, 0),), W(np.diag([4.0, 1.0])), {"lane_target": 0.0})
        v = np.zeros(lay.dim)
        v[lay.slice_of(("x", 0, 0))] = [7.0, 2.0, 0.0]
        g = FactorGraph(lay, [f], lay.blocks())
        assert np.isclose(g.cost(v), 1.0)

    def test_interaction_clamps_near_coincidence(self):
        lay = VariableLayout(2, 1, 0)
        f = Factor("interaction", (("x", 0, 0), ("x", 1, 0)), np.eye(1))
        v = np.zeros(lay.dim)
        v[lay.slice_of(("x", 1, 0))] = [1e-6, 0.0, 0.0]
        wr, jac = evaluate_factor(f, lay, v)
        assert wr[0] == 1.0 / graph_mod.INTERACTION_CLAMP_DISTANCE
        assert np.all(np.isfinite(jac[("x", 0, 0)]))
        # exactly coincident: finite value, zero direction
        v[lay.slice_of(("x", 1, 0))] = 0.0
        wr, jac = evaluate_factor(f, lay, v)
        assert np.isfinite(wr[0])
        assert np.all(jac[("x", 0, 0)] == 0.0)


class TestCostAgainstNaiveEvaluator:
    def test_full_graph_cost_matches(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            g, entries, v = build_random_graph(rng)
            assert np.isclose(g.cost(v), naive_cost(entries, g.layout, v), rtol=1e-10)

    def test_cost_includes_inactive_factors(self):
        rng = np.random.default_rng(22)
        g, entries, v = build_random_graph(rng, free=[("x", 0, 1)])
        assert np.isclose(g.cost(v), naive_cost(entries, g.layout, v), rtol=1e-10)
        assert len(g.active_factors()) < len(g.factors)


class TestResidualAndJacobian:
    def test_jacobian_matches_cost_gradient_fd(self):
        rng = np.random.default_rng(23)
        g, _, v = build_random_graph(rng)
        r, J, free_cols = residual_and_jacobian(g, v)
        assert np.isclose(float(r @ r), g.cost(v), rtol=1e-12)
        grad = 2.0 * (J.T @ r)
        h = 1e-6
        for c in rng.choice(free_cols.shape[0], size=12, replace=False):
            vp, vm = v.copy(), v.copy()
            vp[free_cols[c]] += h
            vm[free_cols[c]] -= h
            fd = (g.cost(vp) - g.cost(vm)) / (2 * h)
            assert np.isclose(grad[c], fd, rtol=1e-4, atol=1e-5)

    def test_frozen_blocks_get_no_columns(self):
        rng = np.random.default_rng(24)
        free = [("x", 0, k) for k in range(4)] + [("u", 0, k) for k in range(3)]
        g, _, v = build_random_graph(rng, free=free)
        r, J, free_cols = residual_and_jacobian(g, v)
        assert J.shape[1] == 4 * 3 + 3  # 4 free states, 3 free controls
        lay = g.layout
        expected = sorted(np.concatenate([np.arange(lay.slice_of(k).start, lay.slice_of(k).stop)
                                          for k in free]))
        assert list(free_cols) == expected

    def test_factor_order_invariance(self):
        rng = np.random.default_rng(25)
        g, _, v = build_random_graph(rng)
        perm = rng.permutation(len(g.factors))
        g2 = FactorGraph(g.layout, [g.factors[p] for p in perm], g.free_keys)
        assert np.isclose(g.cost(v), g2.cost(v), rtol=1e-12)
        r1, J1, _ = residual_and_jacobian(g, v)
        r2, J2, _ = residual_and_jacobian(g2, v)
        assert np.isclose(r1 @ r1, r2 @ r2, rtol=1e-12)
        H1 = (J1.T @ J1).toarray()
        H2 = (J2.T @ J2).toarray()
        assert np.allclose(H1, H2, rtol=1e-10)


class TestLmStep:
    def test_matches_dense_qr(self):
        rng = np.random.default_rng(26)
        g, _, v = build_random_graph(rng)
        r, J, _ = residual_and_jacobian(g, v)
        for lam in (1e-6, 1e-2, 1.0, 1e3):
            step = lm_step(J, r, lam)
            Jd = J.toarray()
            n = Jd.shape[1]
            A = np.vstack([Jd, np.sqrt(lam) * np.eye(n)])
            b = -np.concatenate([r, np.zeros(n)])
            Q, R = np.linalg.qr(A)
            expect = np.linalg.solve(R, Q.T @ b)
            assert np.allclose(step, expect, atol=1e-8)


def simple_linear_graph():
    """Two state priors on one pose: weighted least squares in closed form."""
    lay = VariableLayout(1, 1, 0)
    f1 = Factor("prior_state", (("x", 0, 0),), W(np.diag([1.0, 1.0])), {"lane_target": 0.0})
    f2 = Factor("prior_state", (("x", 0, 0),), W(np.diag([0.25, 1.0])), {"lane_target": 2.0})
    g = FactorGraph(lay, [f1, f2], [("x", 0, 0)])
    # WLS lateral estimate: (0/1 + 2/0.25) / (1/1 + 1/0.25) = 1.6
    return g, lay, 1.6


class TestSolveLm:
    def test_linear_problem_exact(self):
        g, lay, expect = simple_linear_graph()
        v0 = np.zeros(lay.dim)
        v, rep = solve_lm(g, v0)
        assert rep.converged
        assert rep.iterations <= 3
        assert np.isclose(lay.state(v, 0, 0)[1], expect, atol=1e-8)
        assert rep.final_cost <= rep.initial_cost

    def test_zero_residual_start(self):
        lay = VariableLayout(1, 1, 0)
        f = Factor("prior_state", (("x", 0, 0),), W(np.eye(2)), {"lane_target": 0.0})
        g = FactorGraph(lay, [f], [("x", 0, 0)])
        v, rep = solve_lm(g, np.zeros(lay.dim))
        assert rep.converged
        assert rep.iterations == 0
        assert rep.termination == "converged_gradient"

    def test_nothing_free(self):
        lay = VariableLayout(1, 1, 0)
        f = Factor("prior_state", (("x", 0, 0),), W(np.eye(2)), {"lane_target": 1.0})
        g = FactorGraph(lay, [f], [])
        v0 = np.full(lay.dim, 0.5)
        v, rep = solve_lm(g, v0)
        assert rep.termination == "nothing_free"
        assert np.array_equal(v, v0)

    def test_frozen_blocks_bit_identical(self):
        rng = np.random.default_rng(27)
        free = [("x", 0, k) for k in range(4)] + [("u", 0, k) for k in range(3)]
        g, _, v0 = build_random_graph(rng, free=free)
        v, rep = solve_lm(g, v0)
        lay = g.layout
        frozen = sorted(set(range(lay.dim)) - set(np.concatenate(
            [np.arange(lay.slice_of(k).start, lay.slice_of(k).stop) for k in free])))
        assert np.array_equal(v[frozen], v0[frozen])
        assert rep.final_cost < rep.initial_cost

    def test_triangulates_landmark_from_two_poses(self):
        lay = VariableLayout(1, 1, 1)
        truth = np.array([12.0, 7.0])
        poses = {0: np.array([0.0, 0.0, 0.0]), 1: np.array([6.0, 0.0, 0.3])}
        from gtpslam.models import landmark_meas
        factors = [
            Factor("landmark_meas", (("x", 0, k), ("l", 0)), W(np.diag([0.25, 0.01])),
                   {"z": landmark_meas(poses[k], truth)})
            for k in (0, 1)
        ]
        g = FactorGraph(lay, factors, [("l", 0)])
        v0 = np.zeros(lay.dim)
        for k, p in poses.items():
            v0[lay.slice_of(("x", 0, k))] = p
        v0[lay.slice_of(("l", 0))] = [8.0, 2.0]
        v, rep = solve_lm(g, v0)
        assert rep.converged
        assert np.allclose(lay.landmark(v, 0), truth, atol=1e-6)
        assert rep.final_cost < 1e-16

    def test_wraps_heading_after_update(self):
        # prior pulls heading toward 0 from near the cut; iterates stay in range
        lay = VariableLayout(1, 1, 0)
        f = Factor("prior_state", (("x", 0, 0),), W(np.diag([1.0, 1e-4])), {"lane_target": 0.0})
        g = FactorGraph(lay, [f], [("x", 0, 0)])
        v0 = np.zeros(lay.dim)
        v0[lay.slice_of(("x", 0, 0))] = [0.0, 5.0, np.pi - 0.01]
        v, rep = solve_lm(g, v0)
        assert rep.converged
        th = lay.state(v, 0, 0)[2]
        assert -np.pi < th <= np.pi
        assert abs(th) < 1e-6

    def test_nonlinear_rollout_fit(self):
        # dynamics + priors: fitting a short curved trajectory drives cost near zero
        lay = VariableLayout(1, 4, 0)
        factors = []
        for k in range(4):
            factors.append(Factor("dynamics", (("x", 0, k), ("u", 0, k), ("x", 0, k + 1)),
                                  W(np.diag([0.02, 0.02, 0.004])), {"dt": DT, "speed": SPEED}))
            factors.append(Factor("prior_control", (("u", 0, k),), W([[0.09]]), {}))
            factors.append(Factor("prior_state", (("x", 0, k),), W(np.diag([1.0, 0.09])),
                                  {"lane_target": 0.0}))
        g = FactorGraph(lay, factors, lay.blocks())
        rng = np.random.default_rng(28)
        v0 = np.zeros(lay.dim)
        for k in range(5):
            v0[lay.slice_of(("x", 0, k))] = [6.0 * k, rng.normal(0, 1.0), rng.normal(0, 0.2)]
        v, rep = solve_lm(g, v0)
        assert rep.converged
        assert rep.final_cost < 1e-10

    def test_lambda_overflow_reported(self, monkeypatch):
        # force every candidate step to look worse than the current point
        g, lay, _ = simple_linear_graph()
        real = graph_mod.evaluate_factor

        def inflated(factor, layout, v, want_jac=True):
            wr, jac = real(factor, layout, v, want_jac)
            if not want_jac:
                wr = wr + 100.0
            return wr, jac

        monkeypatch.setattr(graph_mod, "evaluate_factor", inflated)
        v, rep = solve_lm(g, np.zeros(lay.dim))
        assert rep.termination == "lambda_overflow"
        assert not rep.converged

    def test_deterministic_across_runs(self):
        rng1 = np.random.default_rng(29)
        g1, _, v1 = build_random_graph(rng1)
        rng2 = np.random.default_rng(29)
        g2, _, v2 = build_random_graph(rng2)
        a, ra = solve_lm(g1, v1)
        b, rb = solve_lm(g2, v2)
        assert np.array_equal(a, b)
        assert ra == rb
