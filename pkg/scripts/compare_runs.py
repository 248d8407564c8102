#!/usr/bin/env python3
"""
Run comparison tool for squisher-lab

Reads the ``report.csv`` of one or more run directories and prints, per
metric, the mean over seeds of every method side by side, plus the gap of
each method to a chosen reference method.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List

import pandas as pd
from tabulate import tabulate

REQUIRED_COLUMNS = {"method", "setting", "metric_name", "metric_value", "seed"}


def load_reports(run_dirs: List[Path]) -> pd.DataFrame:
    frames = []
    for run in run_dirs:
        path = run / "report.csv" if run.is_dir() else run
        if not path.is_file():
            print(f"Error: no report at {path}", file=sys.stderr)
            continue
        frame = pd.read_csv(path)
        missing = REQUIRED_COLUMNS - set(frame.columns)
        if missing:
            print(f"Error: {path} lacks columns {sorted(missing)}", file=sys.stderr)
            continue
        frame["run"] = path.parent.name
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=sorted(REQUIRED_COLUMNS | {"run"}))
    return pd.concat(frames, ignore_index=True)


def compare(frame: pd.DataFrame, metric: str, reference: str) -> pd.DataFrame:
    """Mean metric per (run, setting) with one column per method."""
    rows = frame[frame.metric_name == metric]
    table = rows.pivot_table(
        index=["run", "setting"], columns="method", values="metric_value", aggfunc="mean"
    )
    if reference in table.columns:
        for method in table.columns.drop(reference):
            table[f"{method}-{reference}"] = table[method] - table[reference]
    return table.reset_index()


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Compare squisher-lab runs")
    parser.add_argument("runs", type=Path, nargs="+", help="run directories or report files")
    parser.add_argument("--metric", default="accuracy", help="metric_name to compare")
    parser.add_argument(
        "--reference", default="fisher", help="method the others are compared against"
    )
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    frame = load_reports(args.runs)
    if frame.empty:
        print("No report rows found.")
        return 1
    table = compare(frame, args.metric, args.reference)
    if table.empty:
        print(f"No rows for metric '{args.metric}'.")
        return 1
    print(tabulate(table.values.tolist(), headers=list(table.columns), tablefmt="grid", floatfmt=".4f"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
