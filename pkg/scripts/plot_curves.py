"""Plot gap and PSNR against epochs from one or more ``summary.csv`` files.

    python3 scripts/plot_curves.py results/sparse_view results/low_dose -o curves.png

Needs matplotlib (``pip install -e .[plot]``).
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_summary(path):
    curves = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = curves.setdefault(row["algorithm"], {"epoch": [], "gap": [], "psnr": []})
            c["epoch"].append(float(row["epoch"]))
            c["gap"].append(float(row["gap_mean"]) if row["gap_mean"] else float("nan"))
            c["psnr"].append(float(row["psnr_mean"]) if row["psnr_mean"] else float("nan"))
    return curves


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("dirs", nargs="+")
    parser.add_argument("-o", "--output", default="curves.png")
    args = parser.parse_args()

    fig, axes = plt.subplots(2, len(args.dirs), figsize=(5 * len(args.dirs), 7),
                             squeeze=False)
    for col, d in enumerate(args.dirs):
        curves = read_summary(Path(d) / "summary.csv")
        for algo, c in curves.items():
            axes[0, col].loglog(c["epoch"], c["gap"], label=algo)
            axes[1, col].plot(c["epoch"], c["psnr"], label=algo)
        axes[0, col].set_title(Path(d).name)
        axes[0, col].set_ylabel("saddle gap")
        axes[1, col].set_ylabel("PSNR [dB]")
        axes[1, col].set_xlabel("epoch")
        axes[0, col].legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
