#!/usr/bin/env python3
"""Plots spinprobe CSV output.

    python3 scripts/plot.py qfi-sweep spinprobe-output/qfi_sweep.csv
    python3 scripts/plot.py populations spinprobe-output/populations.csv
    python3 scripts/plot.py estimate spinprobe-output/estimate_runs.csv
"""

import argparse
import csv
import statistics
from collections import defaultdict

import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def qfi_sweep(rows, ax):
    t = [float(r["time"]) for r in rows]
    ax.plot(t, [float(r["controlled_rate"]) for r in rows], "o-", label="controlled")
    ax.plot(t, [float(r["uncontrolled_rate"]) for r in rows], "s--", label="uncontrolled")
    ax.set_xlabel("T [1/J]")
    ax.set_ylabel("F / T²")
    ax.legend()


def populations(rows, ax):
    t = [float(r["time"]) for r in rows]
    sites = sorted((k for k in rows[0] if k.startswith("p") and k[1:].isdigit()), key=lambda k: int(k[1:]))
    for k in sites:
        ax.plot(t, [float(r[k]) for r in rows], label=f"site {k[1:]}" if k != "p0" else "|0⟩")
    ax.set_xlabel("t [1/J]")
    ax.set_ylabel("population")
    ax.legend()


def estimate(rows, ax):
    shots = defaultdict(list)
    for r in rows:
        if not r["error"]:
            shots[r["arm"]].append(float(r["total_shots"]))
    arms = sorted(shots)
    means = [statistics.mean(shots[a]) for a in arms]
    errs = [statistics.stdev(shots[a]) if len(shots[a]) > 1 else 0.0 for a in arms]
    ax.bar(arms, means, yerr=errs, capsize=6)
    ax.set_ylabel("total measurements S")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("kind", choices=["qfi-sweep", "populations", "estimate"])
    p.add_argument("csv")
    p.add_argument("-o", "--output", help="write to a file instead of showing")
    args = p.parse_args()
    fig, ax = plt.subplots()
    {"qfi-sweep": qfi_sweep, "populations": populations, "estimate": estimate}[args.kind](read(args.csv), ax)
    fig.tight_layout()
    if args.output:
        fig.savefig(args.output, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
