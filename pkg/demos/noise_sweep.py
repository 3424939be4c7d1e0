"""Small Monte Carlo sweep comparing the game-aware solver against the
bundle-adjustment baseline across noise levels.

Uses the shipped four-car scenario at reduced trial count so it finishes
in about a minute; the full desk-scale study is

    gtpslam sweep --scenario scenarios/highway4_desk.json --profile desk --out sweep_out

Run from the repository root:

    python3 demos/noise_sweep.py
"""

from gtpslam.core import load_scenario
from gtpslam.harness import run_sweep, summarize

def report(job, outcome):
    _, sigma, _, ti = job[:4]
    statuses = ", ".join(f"{r.method}={r.status}" for r in outcome[0])
    print(f"  sigma={sigma} trial={ti}: {statuses}")


scn = load_scenario("scenarios/highway4_desk.json")
results = run_sweep(scn, levels=[0.5, 1.0], trials_per_level=3, seed0=1,
                    progress=report)

print(f"\n{'sigma':<7} {'method':<9} {'metric':<9} {'median':<9} "
      f"{'q1':<9} {'q3':<9} failures")
for row in summarize(results):
    fmt = lambda v: "-" if v is None else f"{v:.4f}"
    print(f"{row.sigma:<7} {row.method:<9} {row.metric:<9} "
          f"{fmt(row.median):<9} {fmt(row.q1):<9} {fmt(row.q3):<9} "
          f"{row.failures}")
