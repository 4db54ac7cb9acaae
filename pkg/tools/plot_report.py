"""Draw cumulative-error and histogram figures from ``hgpose report`` CSVs.

    python3 tools/plot_report.py report_dir [more_report_dirs ...] --out fig.png

Each report directory becomes one curve, labelled by its folder name.
Requires matplotlib (``pip install artifact[plot]``).
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt  # noqa: E402


def read_xy(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["edge"]) for r in rows], [float(r["value"]) for r in rows]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("reports", nargs="+")
    ap.add_argument("--out", default="report.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [("cumulative_t", "translation error (m)", "fraction below"),
              ("cumulative_q", "orientation error (deg)", "fraction below"),
              ("histogram_t", "translation error (m)", "fraction"),
              ("histogram_q", "orientation error (deg)", "fraction")]
    for ax, (name, xlabel, ylabel) in zip(axes.ravel(), panels):
        for rep in args.reports:
            x, y = read_xy(Path(rep) / f"{name}.csv")
            if name.startswith("cumulative"):
                ax.plot(x, y, label=Path(rep).name)
            else:
                # last bin is the overflow bin
                ax.bar(x, y, width=(x[1] - x[0]) * 0.9, align="edge", alpha=0.6, label=Path(rep).name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
