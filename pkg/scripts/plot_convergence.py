"""Plot train loss and validation MAE per epoch from one or more training logs.

    python3 scripts/plot_convergence.py runs/ablation/*/log.csv -o convergence.png
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_log(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return ([int(r["epoch"]) for r in rows], [float(r["train_loss"]) for r in rows],
            [float(r["val_mae"]) for r in rows])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("logs", nargs="+")
    ap.add_argument("-o", "--output", default="convergence.png")
    args = ap.parse_args()

    fig, (ax_loss, ax_mae) = plt.subplots(1, 2, figsize=(10, 4))
    for path in args.logs:
        epochs, loss, mae = read_log(path)
        label = Path(path).parent.name
        ax_loss.plot(epochs, loss, marker="o", label=label)
        ax_mae.plot(epochs, mae, marker="o", label=label)
    ax_loss.set(xlabel="epoch", ylabel="train loss", yscale="log")
    ax_mae.set(xlabel="epoch", ylabel="val MAE")
    ax_mae.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
