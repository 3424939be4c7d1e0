"""Command-line front end: plan, simulate, estimate, sweep, check."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import EGO, ScenarioError, VariableLayout, load_scenario
from .game import IbrAbort, _deviation_support, potential_identity_check
from .harness import (
    DESK_LEVELS,
    PAPER_LEVELS,
    run_sweep,
    run_trial,
    summarize,
    write_trace_csv,
)
from .sim import (
    GroundTruth,
    TrialSpec,
    plan_ground_truth,
    rollout,
    save_ground_truth,
    save_measurements,
    straight_line_vars,
    synthesize_measurements,
)

PROFILES = {
    "desk": {"levels": DESK_LEVELS, "trials": 10},
    "paper": {"levels": PAPER_LEVELS, "trials": 50},
}


def _parse_levels(text: str) -> list:
    try:
        levels = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad levels list {text!r}")
    if not levels or any(not sigma > 0 for sigma in levels):
        raise argparse.ArgumentTypeError("levels must be positive numbers")
    return levels


def _parse_order(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad player order {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtpslam",
        description="Game-theoretic multi-robot SLAM: planning, simulation, "
                    "estimation, and Monte Carlo sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True, order=True, seed=True, sigma=False):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="master seed")
        if sigma:
            p.add_argument("--sigma", type=float, default=None,
                           help="measurement noise std (default: scenario's)")
        if order:
            p.add_argument("--ibr-order", type=_parse_order, default=None,
                           metavar="PERM", help="player update order, e.g. 0,2,1")
        if out:
            p.add_argument("--out", default=None, metavar="DIR",
                           help="directory for output files")

    p = sub.add_parser("plan", help="solve the planning game for ground truth")
    common(p, seed=False)

    p = sub.add_parser("simulate", help="plan, then synthesize noisy measurements")
    common(p, order=False, sigma=True)

    p = sub.add_parser("estimate", help="one trial: both estimators on one draw")
    common(p, sigma=True)

    p = sub.add_parser("sweep", help="Monte Carlo noise sweep, both methods")
    common(p)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="levels/trials preset (default desk)")
    p.add_argument("--levels", type=_parse_levels, default=None,
                   metavar="CSV", help="noise levels, e.g. 0.1,0.5,1.0")
    p.add_argument("--trials", type=int, default=None, help="trials per level")
    p.add_argument("--workers", type=int, default=1, help="parallel processes")

    p = sub.add_parser("check", help="validate a scenario and the solver identities")
    common(p, out=False, order=False)
    return parser


def _load(path: str):
    try:
        return load_scenario(path)
    except (ScenarioError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        raise SystemExit(2)


def _min_pair_distance(trajectories) -> float:
    best = np.inf
    for i, ti in enumerate(trajectories):
        for tj in trajectories[i + 1:]:
            d = ti.states[:, :2] - tj.states[:, :2]
            best = min(best, float(np.min(np.linalg.norm(d, axis=1))))
    return best


def cmd_plan(args) -> int:
    scn = _load(args.scenario)
    try:
        gt = plan_ground_truth(scn)
    except IbrAbort as abort:
        print(f"planning aborted: {abort}", file=sys.stderr)
        return 1
    tag = "converged" if gt.converged else "NOT converged"
    print(f"plan: {tag} after {gt.ibr_rounds} rounds, "
          f"potential {gt.potential:.6g}")
    if scn.num_players > 1:
        print(f"min pairwise distance {_min_pair_distance(gt.trajectories):.3f} m")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_ground_truth(gt, out / "ground_truth.json")
        print(f"wrote {out / 'ground_truth.json'}")
    return 0 if gt.converged else 1


def cmd_simulate(args) -> int:
    scn = _load(args.scenario)
    sigma = scn.noise_std if args.sigma is None else args.sigma
    if not sigma > 0:
        print("error: sigma must be > 0", file=sys.stderr)
        return 2
    try:
        gt = plan_ground_truth(scn)
    except IbrAbort as abort:
        print(f"planning aborted: {abort}", file=sys.stderr)
        return 1
    meas = synthesize_measurements(gt, TrialSpec(seed=args.seed, noise_std=sigma),
                                   interplayer_mode=scn.interplayer_mode)
    print(f"simulate: sigma={sigma:g} seed={args.seed}: "
          f"{len(meas.landmark)} landmark and "
          f"{len(meas.interplayer)} inter-player measurements")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_ground_truth(gt, out / "ground_truth.json")
        save_measurements(meas, out / "measurements.json")
        print(f"wrote {out / 'ground_truth.json'} and {out / 'measurements.json'}")
    return 0


def cmd_estimate(args) -> int:
    scn = _load(args.scenario)
    sigma = scn.noise_std if args.sigma is None else args.sigma
    if not sigma > 0:
        print("error: sigma must be > 0", file=sys.stderr)
        return 2
    # perturb_scale 0: estimate the scenario exactly as written
    results, trace = run_trial(scn, sigma, 0, 0, args.seed,
                               ibr_order=args.ibr_order, perturb_scale=0.0)
    for r in results:
        if r.is_success:
            print(f"{r.method}: success, vehicle RMSE {r.vehicle_rmse:.6g} m, "
                  f"landmark RMSE {r.landmark_rmse:.6g} m"
                  + (f", {r.ibr_rounds} rounds" if r.method == "gtpslam" else ""))
        else:
            print(f"{r.method}: {r.status}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if trace:
            write_trace_csv(trace, out / "trace.csv")
            print(f"wrote {out / 'trace.csv'}")
    return 0


def cmd_sweep(args) -> int:
    scn = _load(args.scenario)
    profile = PROFILES[args.profile]
    levels = profile["levels"] if args.levels is None else args.levels
    trials = profile["trials"] if args.trials is None else args.trials
    if trials < 0:
        print("error: --trials must be >= 0", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    if args.ibr_order is not None and sorted(args.ibr_order) != list(range(scn.num_players)):
        print(f"error: --ibr-order must be a permutation of 0..{scn.num_players - 1}",
              file=sys.stderr)
        return 2
    out_dir = args.out or "sweep_out"
    results = run_sweep(scn, levels, trials, args.seed, workers=args.workers,
                        ibr_order=args.ibr_order, out_dir=out_dir)
    print(f"{len(results)} results -> {out_dir}/trials.csv")
    for row in summarize(results):
        med = "-" if row.median is None else f"{row.median:.4g}"
        print(f"sigma={row.sigma:<5g} {row.method:<7s} {row.metric:<8s} "
              f"median {med:<10s} failures {row.failures}")
    return 0


def cmd_check(args) -> int:
    scn = _load(args.scenario)
    failed = False

    def report(ok: bool, label: str):
        nonlocal failed
        print(f"{'PASS' if ok else 'FAIL'}: {label}")
        failed = failed or not ok

    report(True, f"scenario loads and validates ({scn.num_players} players, "
                 f"horizon {scn.horizon}, {scn.num_landmarks} landmarks)")

    layout = VariableLayout.for_scenario(scn)
    v = straight_line_vars(scn, layout)
    trajs = [rollout(scn, i, np.zeros(scn.horizon)) for i in range(scn.num_players)]
    if scn.num_players > 1:
        dmin = _min_pair_distance(trajs)
        report(dmin > 1.0,
               f"straight-line rollouts stay separated (min distance {dmin:.3f} m)")

    gt = GroundTruth(trajectories=trajs, landmarks=np.array(scn.landmarks),
                     ibr_rounds=0, potential=0.0)
    meas = synthesize_measurements(
        gt, TrialSpec(seed=args.seed, noise_std=scn.noise_std),
        interplayer_mode=scn.interplayer_mode)

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(20):
        r = int(rng.integers(scn.num_players))
        support = _deviation_support(scn, layout, r)
        deviation = np.zeros(layout.dim)
        deviation[support] = 0.1 * rng.standard_normal(len(support))
        base = v + 0.05 * rng.standard_normal(layout.dim)
        dL, dp = potential_identity_check(scn, meas, base, r, deviation)
        worst = max(worst, abs(dL - dp) / (1.0 + abs(dp)))
    report(worst <= 1e-9,
           f"unilateral cost changes match potential changes (worst {worst:.2e})")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "plan": cmd_plan,
        "simulate": cmd_simulate,
        "estimate": cmd_estimate,
        "sweep": cmd_sweep,
        "check": cmd_check,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
