"""Report rendering: byte-stable JSON/CSV plus matplotlib figures.

All figures render through the Agg backend straight to files. JSON is written
with sorted keys and no trailing whitespace so identical inputs give
identical bytes; CSV cells use repr-style float formatting for the same
reason.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(_sanitize(obj), sort_keys=True, indent=2)
    _atomic_write_text(path, text + "\n")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(repr(float(cell)))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _save(fig, path) -> None:
    fig.savefig(os.fspath(path), dpi=110)
    plt.close(fig)


def fig_training_curves(history: list[dict], keys: list[str], path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h.get("epoch", i) for i, h in enumerate(history)]
    for key in keys:
        series = [h[key] for h in history if key in h]
        xs = [e for h, e in zip(history, epochs) if key in h]
        if series:
            ax.plot(xs, series, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def fig_cosine_histograms(hist: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    edges = np.asarray(hist["edges"])
    centers = (edges[:-1] + edges[1:]) / 2
    width = edges[1] - edges[0]
    same = np.asarray(hist["same_hist"], float)
    diff = np.asarray(hist["diff_hist"], float)
    ax.bar(centers, same / max(1.0, same.sum()), width=width, alpha=0.6, label="same emotion")
    ax.bar(centers, diff / max(1.0, diff.sum()), width=width, alpha=0.6, label="different emotion")
    ax.axvline(hist["same_mean"], color="C0", linestyle="--")
    ax.axvline(hist["diff_mean"], color="C1", linestyle="--")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("fraction of pairs")
    ax.set_title("cross-modal embedding similarity")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def fig_retrieval_bars(table: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = ["audio->motion", "motion->audio"] + [f"emotion {e}" for e in sorted(table["per_emotion"])]
    values = [table["audio_to_motion"], table["motion_to_audio"]] + [
        table["per_emotion"][e] for e in sorted(table["per_emotion"])
    ]
    ax.bar(range(len(values)), values, color=["C0", "C0"] + ["C2"] * (len(values) - 2))
    ax.axhline(0.25, color="gray", linestyle=":", label="chance")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("top-1 accuracy")
    ax.set_title("inter-modal retrieval")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def fig_diversity_sweep(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r["setting"] for r in rows]
    ax.plot(range(len(rows)), [r["diversity"] for r in rows], "o-", label="diversity")
    ax2 = ax.twinx()
    ax2.plot(range(len(rows)), [r["lip_corr"] for r in rows], "s--", color="C3", label="lip correlation")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("diversity")
    ax2.set_ylabel("lip correlation")
    ax.set_title("sampling controls")
    fig.tight_layout()
    _save(fig, path)


def fig_metric_bars(rows: dict, metric: str, path, lower_is_better: bool = True) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = sorted(rows)
    values = [rows[n][metric] for n in names]
    ax.bar(names, values, color="C0")
    direction = "lower is better" if lower_is_better else "higher is better"
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} by variant ({direction})")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    _save(fig, path)


def fig_motion_traces(motion: np.ndarray, path, title: str, dims: list[int] | None = None) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    motion = np.asarray(motion)
    for d in dims if dims is not None else range(0, motion.shape[1], max(1, motion.shape[1] // 6)):
        ax.plot(motion[:, d], lw=0.9, label=f"dim {d}")
    ax.set_xlabel("frame")
    ax.set_ylabel("coefficient")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    _save(fig, path)
