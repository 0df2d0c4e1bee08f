#!/usr/bin/env python3
"""Render a landscape CSV (alpha,beta,P) as a heatmap.

Usage: plot_landscape.py <landscape.csv> <out.png> [--manifest m.json]
Solution markers are drawn when the sidecar manifest is given (or found next
to the CSV).
"""

import csv
import json
import math
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) < 3:
        print(__doc__)
        return 2
    csv_path = Path(sys.argv[1])
    out_path = Path(sys.argv[2])
    manifest_path = None
    if "--manifest" in sys.argv:
        manifest_path = Path(sys.argv[sys.argv.index("--manifest") + 1])
    else:
        candidate = csv_path.with_suffix("").with_suffix("")  # strip .csv
        candidate = Path(str(csv_path)[: -len(".csv")] + ".manifest.json")
        if candidate.exists():
            manifest_path = candidate

    alphas, betas, values = [], [], {}
    with open(csv_path) as fh:
        for row in csv.DictReader(fh):
            a, b, p = float(row["alpha"]), float(row["beta"]), float(row["P"])
            alphas.append(a)
            betas.append(b)
            values[(a, b)] = p
    xs = sorted(set(alphas))
    ys = sorted(set(betas))
    side = len(xs)
    if side * len(ys) != len(values):
        print("grid is not rectangular", file=sys.stderr)
        return 1

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = [[values[(x, y)] for x in xs] for y in ys]
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(
        grid,
        origin="lower",
        extent=(xs[0], xs[-1], ys[0], ys[-1]),
        cmap="viridis",
        aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="P")
    ax.set_xlabel("alpha")
    ax.set_ylabel("beta")

    if manifest_path and manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        markers = {"adapter": "o", "prefix": "s", "lora": "^"}
        for name, (a, b) in manifest.get("solutions", {}).items():
            if abs(a) <= abs(xs[0]) and abs(b) <= abs(ys[-1]):
                ax.plot(a, b, markers.get(name, "x"), color="white", markersize=8)
                ax.annotate(name, (a, b), color="white", fontsize=8,
                            xytext=(4, 4), textcoords="offset points")
        ax.set_title(manifest.get("task", csv_path.stem))

    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
