#!/usr/bin/env python3
"""Convert raw trajectory annotations to the plain `frame id x y` layout."""

import argparse
import sys

import numpy as np


def load_rows(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.replace(",", " ").split()])
    return np.array(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input")
    ap.add_argument("--homography", help="3x3 image-to-world matrix, whitespace separated")
    ap.add_argument("--obsmat", action="store_true",
                    help="input is BIWI obsmat (frame id x z y vx vz vy), already in meters")
    ap.add_argument("--step", type=int, default=1, help="keep frames divisible by this step")
    ap.add_argument("--fps", type=float, default=25.0)
    args = ap.parse_args()

    rows = load_rows(args.input)
    frames, ids = rows[:, 0].astype(int), rows[:, 1].astype(int)
    if args.obsmat:
        xy = rows[:, [2, 4]]
    else:
        uv = rows[:, 2:4]
        if args.homography:
            h = np.loadtxt(args.homography).reshape(3, 3)
            p = np.c_[uv, np.ones(len(uv))] @ h.T
            xy = p[:, :2] / p[:, 2:3]
        else:
            xy = uv
    keep = frames % args.step == 0
    order = np.lexsort((ids[keep], frames[keep]))
    out = sys.stdout
    out.write(f"# source_fps = {args.fps:g}\n# rows = {int(keep.sum())}\n")
    for f, i, (x, y) in zip(frames[keep][order], ids[keep][order], xy[keep][order]):
        out.write(f"{f}\t{i}\t{x:.4f}\t{y:.4f}\n")


if __name__ == "__main__":
    main()
