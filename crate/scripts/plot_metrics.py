"""Plot training curves from a run's metrics.csv.

Usage: python scripts/plot_metrics.py runs/a/metrics.csv [more.csv ...] --out curves.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

PANELS = [
    ("mean_accuracy_reward", "accuracy reward"),
    ("mean_format_reward", "format reward"),
    ("mean_completion_length", "completion length"),
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv", nargs="+")
    parser.add_argument("--out", default="curves.png")
    parser.add_argument("--window", type=int, default=50, help="rolling mean window")
    args = parser.parse_args()

    fig, axes = plt.subplots(1, len(PANELS), figsize=(5 * len(PANELS), 3.5))
    for path in args.csv:
        df = pd.read_csv(path)
        for ax, (column, title) in zip(axes, PANELS):
            smooth = df[column].rolling(args.window, min_periods=1).mean()
            ax.plot(df["step"], smooth, label=path)
            ax.set_title(title)
            ax.set_xlabel("step")
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
