"""Monte Carlo comparison of the game-theoretic estimator and the baseline.

One trial at noise level sigma: perturb the scenario's initial conditions,
plan equilibrium ground truth, synthesize noisy measurements, then run both
estimators from the identical initial guess.  Every random draw is derived
from (seed0, level index, trial index) through ``numpy.random.SeedSequence``
spawn keys, so a sweep is reproducible trial by trial regardless of worker
count or execution order.

``trials.csv`` and ``summary.csv`` are byte-deterministic for a given
scenario/levels/trials/seed0; wall-clock times go to ``timing.csv`` which is
not.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline import solve_ba
from .core import Scenario
from .game import IbrAbort, solve_ibr
from .sim import (
    TrialSpec,
    estimation_init,
    perturb_initials,
    plan_ground_truth,
    synthesize_measurements,
    with_noise_level,
)

METHODS = ("gtpslam", "ba")
STATUSES = ("success", "not_converged", "ibr_abort", "lambda_overflow", "plan_failed")

# noise levels sigma: the full 20-level ladder and the quick 3-level one
PAPER_LEVELS = tuple(round(0.05 * i, 2) for i in range(1, 21))
DESK_LEVELS = (0.1, 0.5, 1.0)

TRIALS_COLUMNS = ("sigma", "seed", "method", "status",
                  "vehicle_rmse", "landmark_rmse", "ibr_rounds")
SUMMARY_COLUMNS = ("sigma", "method", "metric", "median", "q1", "q3", "failures")
TIMING_COLUMNS = ("sigma", "seed", "method", "wall_time_s")
TRACE_COLUMNS = ("round", "player", "cost_before", "cost_after", "potential")


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one (trial, method) run.

    RMSEs are present exactly when status is "success"; a run that
    finished without converging reports no error metrics rather than a
    number of unknown meaning.
    """

    sigma: float
    seed: int
    method: str
    status: str
    vehicle_rmse: float | None
    landmark_rmse: float | None
    wall_time_s: float
    ibr_rounds: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        have = self.vehicle_rmse is not None and self.landmark_rmse is not None
        none = self.vehicle_rmse is None and self.landmark_rmse is None
        if self.status == "success":
            if not have:
                raise ValueError("successful trial must carry both RMSEs")
        elif not none:
            raise ValueError(f"status {self.status!r} must not carry RMSEs")

    @property
    def is_success(self) -> bool:
        return self.status == "success"


@dataclass(frozen=True)
class SummaryRow:
    """Per (sigma, method, metric) statistics over successful trials."""

    sigma: float
    method: str
    metric: str           # vehicle | landmark
    median: float | None  # None when no trial succeeded
    q1: float | None
    q3: float | None
    failures: int


def vehicle_rmse(est_trajectories, true_trajectories) -> float:
    """Root mean square planar position error over all players and stages.

    Heading is excluded; mixing radians into a meters metric would make
    the number unit-free.
    """
    if len(est_trajectories) != len(true_trajectories):
        raise ValueError("player count mismatch")
    sq = []
    for est, true in zip(est_trajectories, true_trajectories):
        if est.states.shape != true.states.shape:
            raise ValueError("stage count mismatch")
        d = est.states[:, :2] - true.states[:, :2]
        sq.append(np.sum(d * d, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(sq))))


def landmark_rmse(est_landmarks, true_landmarks, measured=None) -> float:
    """Root mean square planar error over landmarks (all by default).

    The sweep passes the measured subset: an unmeasured landmark never
    enters any factor and keeps its init value, so including it would
    grade the initializer, not the estimator.
    """
    est = np.asarray(est_landmarks, dtype=float).reshape(-1, 2)
    true = np.asarray(true_landmarks, dtype=float).reshape(-1, 2)
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {true.shape}")
    idx = sorted(range(len(est)) if measured is None else measured)
    if not idx:
        raise ValueError("no landmarks to score")
    d = est[idx] - true[idx]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def trial_seeds(seed0: int, level_idx: int, trial_idx: int) -> tuple:
    """(recorded label, perturbation seed, measurement seed) for one trial."""

    def draw(*spawn_key):
        ss = np.random.SeedSequence(entropy=seed0, spawn_key=spawn_key)
        return int(ss.generate_state(1)[0])

    return (draw(level_idx, trial_idx),
            draw(level_idx, trial_idx, 0),
            draw(level_idx, trial_idx, 1))


def run_trial(scn: Scenario, sigma: float, level_idx: int, trial_idx: int,
              seed0: int, ibr_order=None, perturb_scale: float = 1.0):
    """Run both estimators on one synthesized trial.

    Returns ([gtpslam TrialResult, ba TrialResult], ibr_trace_rows).
    Both estimators start from the same initial guess on the same
    measurements; failures become statuses, never exceptions.
    """
    label, seed_perturb, seed_meas = trial_seeds(seed0, level_idx, trial_idx)
    scn_t = perturb_initials(scn, seed_perturb, perturb_scale)

    t0 = time.perf_counter()
    try:
        gt = plan_ground_truth(scn_t)
        plan_ok = gt.converged
    except IbrAbort:
        plan_ok = False
    plan_time = time.perf_counter() - t0
    if not plan_ok:
        out = [
            TrialResult(sigma=sigma, seed=label, method=m, status="plan_failed",
                        vehicle_rmse=None, landmark_rmse=None,
                        wall_time_s=plan_time, ibr_rounds=0)
            for m in METHODS
        ]
        return out, []

    spec = TrialSpec(seed=seed_meas, noise_std=sigma, perturb_scale=perturb_scale)
    # the scenario's measurement covariances are the unit-sigma sensor
    # shapes, used identically for drawing noise and for the estimator
    meas = synthesize_measurements(gt, spec, interplayer_mode=scn.interplayer_mode,
                                   w_h=scn.covariances.sigma_h,
                                   w_h_bar=scn.covariances.sigma_h_bar)
    scn_est = with_noise_level(scn_t, sigma)
    v0 = estimation_init(scn_est, meas)
    measured = meas.measured_landmarks()

    results = []
    trace_rows = []

    t0 = time.perf_counter()
    try:
        sol = solve_ibr(scn_est, meas, v0, order=ibr_order)
    except IbrAbort as abort:
        results.append(TrialResult(
            sigma=sigma, seed=label, method="gtpslam", status="ibr_abort",
            vehicle_rmse=None, landmark_rmse=None,
            wall_time_s=time.perf_counter() - t0, ibr_rounds=abort.round))
    else:
        elapsed = time.perf_counter() - t0
        trace_rows = sol.trace_rows()
        if sol.converged:
            results.append(TrialResult(
                sigma=sigma, seed=label, method="gtpslam", status="success",
                vehicle_rmse=vehicle_rmse(sol.trajectories, gt.trajectories),
                landmark_rmse=landmark_rmse(sol.landmarks, gt.landmarks, measured),
                wall_time_s=elapsed, ibr_rounds=sol.ibr_iterations))
        else:
            results.append(TrialResult(
                sigma=sigma, seed=label, method="gtpslam", status="not_converged",
                vehicle_rmse=None, landmark_rmse=None,
                wall_time_s=elapsed, ibr_rounds=sol.ibr_iterations))

    t0 = time.perf_counter()
    sol = solve_ba(scn_est, meas, v0)
    elapsed = time.perf_counter() - t0
    if sol.converged:
        results.append(TrialResult(
            sigma=sigma, seed=label, method="ba", status="success",
            vehicle_rmse=vehicle_rmse(sol.trajectories, gt.trajectories),
            landmark_rmse=landmark_rmse(sol.landmarks, gt.landmarks, measured),
            wall_time_s=elapsed, ibr_rounds=0))
    else:
        status = ("lambda_overflow"
                  if sol.report.termination == "lambda_overflow" else "not_converged")
        results.append(TrialResult(
            sigma=sigma, seed=label, method="ba", status=status,
            vehicle_rmse=None, landmark_rmse=None,
            wall_time_s=elapsed, ibr_rounds=0))

    return results, trace_rows


def _sweep_job(args):
    return run_trial(*args)


def run_sweep(scn: Scenario, levels=None, trials_per_level: int = 50,
              seed0: int = 0, workers: int = 1, ibr_order=None,
              perturb_scale: float = 1.0, out_dir=None, progress=None):
    """All trials for all noise levels, in canonical order.

    Order: levels as given (default the 20-level ladder), trials
    ascending, gtpslam before ba.  With workers > 1 the trials run in a
    process pool; results are identical because every trial is seeded
    independently.  trials_per_level=0 yields an empty result.  When
    ``out_dir`` is given, writes trials.csv, summary.csv, timing.csv and
    per-trial IBR traces under trace/.
    """
    if levels is None:
        levels = PAPER_LEVELS
    if not levels or any(not sigma > 0 for sigma in levels):
        raise ValueError("levels must be nonempty with every sigma > 0")
    if trials_per_level < 0:
        raise ValueError("trials_per_level must be >= 0")
    jobs = [
        (scn, float(sigma), li, ti, seed0, ibr_order, perturb_scale)
        for li, sigma in enumerate(levels)
        for ti in range(trials_per_level)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sweep_job, jobs, chunksize=1))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_sweep_job(job))
            if progress is not None:
                progress(job, outcomes[-1])

    results = [r for pair, _ in outcomes for r in pair]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trials_csv(results, out_dir / "trials.csv")
        write_summary_csv(summarize(results), out_dir / "summary.csv")
        write_timing_csv(results, out_dir / "timing.csv")
        trace_dir = out_dir / "trace"
        trace_dir.mkdir(exist_ok=True)
        for (job, (_, trace)) in zip(jobs, outcomes):
            _, _, li, ti = job[:4]
            if trace:
                write_trace_csv(trace, trace_dir / f"level{li}_trial{ti:03d}.csv")
    return results


def summarize(results) -> list:
    """Quartiles over successful trials, grouped by (sigma, method).

    Groups appear in first-encounter sigma order, gtpslam before ba,
    vehicle before landmark.  A group where every trial failed still gets
    rows, with empty statistics and the failure count.
    """
    sigmas = []
    for r in results:
        if r.sigma not in sigmas:
            sigmas.append(r.sigma)
    rows = []
    for sigma in sigmas:
        for method in METHODS:
            group = [r for r in results if r.sigma == sigma and r.method == method]
            if not group:
                continue
            failures = sum(not r.is_success for r in group)
            for metric in ("vehicle", "landmark"):
                values = [getattr(r, f"{metric}_rmse") for r in group if r.is_success]
                if values:
                    q1, med, q3 = (float(q) for q in np.percentile(values, [25, 50, 75]))
                else:
                    q1 = med = q3 = None
                rows.append(SummaryRow(sigma=sigma, method=method, metric=metric,
                                       median=med, q1=q1, q3=q3, failures=failures))
    return rows


def _field(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_rows(path, header, rows) -> None:
    # "\n" line ends and repr() floats keep re-runs byte-identical
    lines = [",".join(header)]
    lines += [",".join(_field(x) for x in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_trials_csv(results, path) -> None:
    _write_rows(path, TRIALS_COLUMNS, [
        (r.sigma, r.seed, r.method, r.status,
         r.vehicle_rmse, r.landmark_rmse, r.ibr_rounds)
        for r in results
    ])


def write_summary_csv(rows, path) -> None:
    _write_rows(path, SUMMARY_COLUMNS, [
        (s.sigma, s.method, s.metric, s.median, s.q1, s.q3, s.failures)
        for s in rows
    ])


def write_timing_csv(results, path) -> None:
    _write_rows(path, TIMING_COLUMNS, [
        (r.sigma, r.seed, r.method, r.wall_time_s) for r in results
    ])


def write_trace_csv(trace_rows, path) -> None:
    _write_rows(path, TRACE_COLUMNS, [
        tuple(row[c] for c in TRACE_COLUMNS) for row in trace_rows
    ])
