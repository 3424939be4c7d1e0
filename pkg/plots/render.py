#!/usr/bin/env python3
"""Render a sweep summary.csv as an RMSE-vs-noise chart.

Usage:

    python3 plots/render.py <summary.csv> <out.png>

One color per method, thick lines for the vehicle metric, thin lines
for the landmark metric, shaded interquartile bands.  The script plots
the median/q1/q3 columns verbatim; it never recomputes statistics from
trial data.  A malformed or empty CSV is a hard error and no output
file is written.
"""

import csv
import sys
from pathlib import Path

EXPECTED_COLUMNS = ["sigma", "method", "metric", "median", "q1", "q3", "failures"]
METRICS = ("vehicle", "landmark")

METHOD_COLORS = {"gtpslam": "tab:blue", "ba": "tab:orange"}
METRIC_WIDTHS = {"vehicle": 2.6, "landmark": 1.1}


class SummaryError(ValueError):
    """The CSV does not match the documented summary schema."""


def _parse_stat(row, name):
    text = row[name]
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise SummaryError(f"{name}={text!r} is not a number") from None


def read_summary(path):
    """Parse and validate; returns a list of plain dicts, stats verbatim.

    median/q1/q3 are None for groups with no successful trials (all
    three must be empty together).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SummaryError("file is empty, no header row") from None
        if header != EXPECTED_COLUMNS:
            raise SummaryError(
                f"header {header} does not match {EXPECTED_COLUMNS}")
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if len(values) != len(EXPECTED_COLUMNS):
                raise SummaryError(f"line {lineno}: expected "
                                   f"{len(EXPECTED_COLUMNS)} fields, got {len(values)}")
            row = dict(zip(EXPECTED_COLUMNS, values))
            try:
                parsed = {
                    "sigma": float(row["sigma"]),
                    "method": row["method"],
                    "metric": row["metric"],
                    "median": _parse_stat(row, "median"),
                    "q1": _parse_stat(row, "q1"),
                    "q3": _parse_stat(row, "q3"),
                    "failures": int(row["failures"]),
                }
            except (ValueError, SummaryError) as exc:
                raise SummaryError(f"line {lineno}: {exc}") from None
            if parsed["metric"] not in METRICS:
                raise SummaryError(f"line {lineno}: unknown metric {parsed['metric']!r}")
            stats = [parsed["median"], parsed["q1"], parsed["q3"]]
            if any(s is None for s in stats) != all(s is None for s in stats):
                raise SummaryError(f"line {lineno}: median/q1/q3 must be "
                                   "all present or all empty")
            if parsed["median"] is not None and not (
                    parsed["q1"] <= parsed["median"] <= parsed["q3"]):
                raise SummaryError(f"line {lineno}: q1 <= median <= q3 violated")
            if parsed["failures"] < 0:
                raise SummaryError(f"line {lineno}: negative failure count")
            rows.append(parsed)
    if not rows:
        raise SummaryError("no data rows")
    return rows


def render_rmse_plot(summary_csv, out_image):
    rows = read_summary(summary_csv)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    for method in methods:
        color = METHOD_COLORS.get(method, "tab:gray")
        for metric in METRICS:
            pts = sorted((r for r in rows
                          if r["method"] == method and r["metric"] == metric
                          and r["median"] is not None),
                         key=lambda r: r["sigma"])
            if not pts:
                continue
            x = [r["sigma"] for r in pts]
            ax.fill_between(x, [r["q1"] for r in pts], [r["q3"] for r in pts],
                            color=color, alpha=0.15, linewidth=0)
            ax.plot(x, [r["median"] for r in pts], color=color,
                    linewidth=METRIC_WIDTHS[metric],
                    marker="o", markersize=3.5,
                    label=f"{method} {metric}")
    ax.set_xlabel("measurement noise level $\\sigma$")
    ax.set_ylabel("RMSE (m), median with interquartile band")
    ax.set_xticks(sorted({r["sigma"] for r in rows}))
    ax.grid(True, alpha=0.3)
    total_failures = sum(r["failures"] for r in rows if r["metric"] == "vehicle")
    if total_failures:
        ax.set_title(f"failed trials excluded ({total_failures} across all levels)",
                     fontsize=9, loc="right", color="0.4")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_image, dpi=150)
    plt.close(fig)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if len(argv) != 2:
        print("usage: render.py <summary.csv> <out.png>", file=sys.stderr)
        return 2
    summary_csv, out_image = argv
    try:
        render_rmse_plot(summary_csv, out_image)
    except (SummaryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out_image}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
