#!/usr/bin/env python3
"""Recompute a run's summary.csv from its per-seed CSV files and diff the two.

Usage: recompute_summary.py RUN_DIR [RUN_DIR ...]

Deliberately independent of the bayes_curiosity package: it reads
config.json, seed_*/learning_curve.csv and (if present)
seed_*/trajectories.csv, and rebuilds every per-seed and aggregate row.
Exit status is 0 when all rows agree exactly, 1 otherwise.
"""

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def trailing_means(values, window):
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1):i + 1]
        out.append(math.fsum(chunk) / len(chunk))
    return out


def read_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ([int(r["timesteps"]) for r in rows],
            [float(r["mean_extrinsic"]) for r in rows],
            [r["success_flag"] == "1" for r in rows])


def min_logged_curiosity(path):
    lowest = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = float(row["c_t"])
            lowest = c if lowest is None else min(lowest, c)
    return lowest


def recompute(run_dir):
    run_dir = Path(run_dir)
    config = json.loads((run_dir / "config.json").read_text())
    w = config["smooth_window"]
    seeds = [config["seed_base"] + i for i in range(config["n_seeds"])]
    rows, finals, peaks, firsts = [], [], [], []
    for seed in seeds:
        scope = f"seed_{seed}"
        curve_path = run_dir / scope / "learning_curve.csv"
        if (run_dir / scope / "error.txt").exists() or not curve_path.exists():
            continue  # failed seeds: status text is free-form, not recomputed
        steps, returns, success = read_curve(curve_path)
        final = math.fsum(returns[-w:]) / len(returns[-w:])
        smoothed = trailing_means(returns, w)
        peak = steps[max(range(len(smoothed)), key=lambda i: (smoothed[i], -i))]
        first = next((t for t, s in zip(steps, success) if s), None)
        rows += [[scope, "status", "ok"], [scope, "final_reward", fmt(final)],
                 [scope, "timesteps_to_peak", fmt(peak)], [scope, "first_success_timestep", fmt(first)]]
        traj_path = run_dir / scope / "trajectories.csv"
        if not config["curiosity"]:
            rows.append([scope, "min_curiosity", ""])
        elif traj_path.exists():
            rows.append([scope, "min_curiosity", fmt(min_logged_curiosity(traj_path))])
        finals.append(final)
        peaks.append(peak)
        firsts.append(first)
    rows += [["aggregate", "n_seeds", fmt(len(seeds))], ["aggregate", "n_ok", fmt(len(finals))],
             ["aggregate", "partial", fmt(len(finals) < len(seeds))]]
    if finals:
        q25, q50, q75 = np.percentile(np.array(finals), [25, 50, 75], method="linear")
        inf_firsts = [math.inf if t is None else float(t) for t in firsts]
        rows += [
            ["aggregate", "q25_final_reward", fmt(q25)],
            ["aggregate", "median_final_reward", fmt(q50)],
            ["aggregate", "q75_final_reward", fmt(q75)],
            ["aggregate", "median_timesteps_to_peak", fmt(float(np.median(peaks)))],
            ["aggregate", "median_first_success_timestep", fmt(float(np.median(inf_firsts)))],
            ["aggregate", "n_success", fmt(sum(t is not None for t in firsts))],
        ]
    return rows


def check(run_dir):
    with open(Path(run_dir) / "summary.csv", newline="") as fh:
        written = list(csv.reader(fh))[1:]
    # speedup rows come from the paired baseline run, and status rows of failed seeds are free text
    skip = {"speedup", "speedup_inverted"}
    failed = {r[0] for r in written if r[1] == "status" and r[2] != "ok"}
    # without trajectory dumps the logged minimum curiosity cannot be rebuilt
    unverifiable = {r[0] for r in written if r[1] == "min_curiosity" and r[2] != ""
                    and not (Path(run_dir) / r[0] / "trajectories.csv").exists()}
    written = [r for r in written if r[1] not in skip and r[0] not in failed
               and not (r[1] == "min_curiosity" and r[0] in unverifiable)]
    recomputed = recompute(run_dir)
    if written == recomputed:
        return []
    got = {(r[0], r[1]): r[2] for r in written}
    want = {(r[0], r[1]): r[2] for r in recomputed}
    return [f"{k[0]},{k[1]}: summary={got.get(k)!r} recomputed={want.get(k)!r}"
            for k in sorted(set(got) | set(want)) if got.get(k) != want.get(k)]


def main(argv):
    if not argv:
        print(__doc__, file=sys.stderr)
        return 2
    status = 0
    for run_dir in argv:
        diffs = check(run_dir)
        print(f"{run_dir}: {'OK' if not diffs else f'{len(diffs)} mismatches'}")
        for d in diffs:
            print("  " + d)
        status |= bool(diffs)
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
