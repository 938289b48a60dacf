#!/usr/bin/env python3
"""Draw agent paths from a `simulate` trajectories file, coloured by profile."""

import argparse

import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("trajectories")
    ap.add_argument("--until", type=float, help="only draw up to this time (s)")
    ap.add_argument("-o", "--output", default="trajectories.png")
    args = ap.parse_args()

    df = pd.read_csv(args.trajectories)
    if args.until is not None:
        df = df[df["time"] <= args.until]
    colors = dict(zip(sorted(df["profile"].unique()), plt.cm.tab10.colors))
    fig, ax = plt.subplots(figsize=(7, 7))
    for (_, profile), track in df.groupby(["agent_id", "profile"]):
        ax.plot(track["x"], track["y"], lw=0.8, color=colors[profile])
    for profile, color in colors.items():
        ax.plot([], [], color=color, label=profile)
    ax.set_aspect("equal")
    ax.legend()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
