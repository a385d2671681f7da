#!/usr/bin/env python3
"""Render one or more point-cloud CSVs (as written by the CLI) as scatter plots.

Usage: python scripts/plot_clouds.py out/spiral/eval_truth.csv out/spiral/eval_samples.csv
Needs matplotlib, which is not a package dependency.
"""

import sys
from pathlib import Path

import numpy as np


def load(path):
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(path).read_text().splitlines()
        if line and not line.startswith("#")
    ]
    return np.asarray(rows)


def main(paths):
    if not paths:
        print(__doc__)
        return 2
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    clouds = [(Path(p).stem, load(p)) for p in paths]
    dim = clouds[0][1].shape[1]
    fig = plt.figure(figsize=(5 * len(clouds), 5))
    for i, (name, pts) in enumerate(clouds, start=1):
        if dim >= 3:
            ax = fig.add_subplot(1, len(clouds), i, projection="3d")
            ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=2)
        else:
            ax = fig.add_subplot(1, len(clouds), i)
            ax.scatter(pts[:, 0], pts[:, 1], s=2)
            ax.set_aspect("equal")
        ax.set_title(name)
    out = Path(paths[0]).with_suffix(".png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
