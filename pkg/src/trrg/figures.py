"""Figure rendering for run outputs: loss curves next to loss CSVs,
metric bars next to metrics.json, and sweep charts next to sweep.csv.
"""

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(csv_path, png_path, columns=("loss",)):
    steps, series = [], {c: [] for c in columns}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            for c in columns:
                series[c].append(float(row[c]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in columns:
        ax.plot(steps, series[c], label=c)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path


def metrics_bars(metrics, png_path):
    keys = sorted(metrics)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(keys)), [metrics[k] for k in keys])
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=45, ha="right")
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path


def sweep_chart(header, rows, png_path, title=""):
    labels = [row[0] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in ("bleu4", "rouge_l", "ce_f1"):
        if column in header:
            idx = header.index(column)
            ax.plot(labels, [row[idx] for row in rows], marker="o", label=column)
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path
