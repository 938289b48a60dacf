#!/usr/bin/env python3
"""Plot average speed and congestion from one or more `simulate` metrics files."""

import argparse

import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("metrics", nargs="+", help="metrics.csv files, optionally as label=path")
    ap.add_argument("-o", "--output", default="metrics.png")
    args = ap.parse_args()

    fig, (speed, jam) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for item in args.metrics:
        label, _, path = item.rpartition("=")
        df = pd.read_csv(path)
        label = label or path
        speed.plot(df["time"], df["avg_speed_all"], label=label)
        jam.plot(df["time"], df["congestion_factor"], label=label)
    speed.set_ylabel("mean speed (m/s)")
    jam.set_ylabel("congestion factor")
    jam.set_xlabel("time (s)")
    speed.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
