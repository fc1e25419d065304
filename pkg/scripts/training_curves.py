"""Plot train loss and validation MSE from one or more metrics.csv files.

    python3 scripts/training_curves.py results/amplifier/*_metrics.csv -o curves.png
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["epoch"]) for r in rows], [float(r["train_loss"]) for r in rows], [float(r["valid_mse"]) for r in rows]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("files", nargs="+", type=Path)
    ap.add_argument("-o", "--output", type=Path, default=Path("curves.png"))
    args = ap.parse_args()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for f in args.files:
        ep, tr, va = read(f)
        axes[0].semilogy(ep, tr, label=f.stem)
        axes[1].semilogy(ep, va, label=f.stem)
    axes[0].set_title("training loss")
    axes[1].set_title("validation MSE")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
