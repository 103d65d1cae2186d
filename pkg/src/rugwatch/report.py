"""Run summaries: metric tables as CSV and Markdown, plus figures."""
from __future__ import annotations

import csv
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .labeling import MALICIOUS, RULE_FAST_RUG_PULL

log = logging.getLogger(__name__)

# Summary-table rows; the sensitivity column is conventionally reported
# as recall when a single run is being summarized.
ACTIVITY_TABLE_ROWS = (
    ("Accuracy", "accuracy"),
    ("Recall", "sensitivity"),
    ("Precision", "precision"),
    ("F1-score", "f1"),
)
HOURS_CSV_FIELDS = ["hour", "accuracy", "sensitivity", "precision", "f1"]

_PNG_METADATA = {"Software": "rugwatch"}


def _fmt(value: float) -> str:
    return f"{value:.4f}"


# ------------------------------------------------------- activity table


def activity_table(summary: dict) -> list[tuple[str, float, float]]:
    """(name, mean, std) rows from a `{metric: {mean, std}}` summary."""
    return [(name, summary[key]["mean"], summary[key]["std"]) for name, key in ACTIVITY_TABLE_ROWS]


def write_activity_csv(table: list[tuple[str, float, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "mean", "std"])
        for name, mean, std in table:
            writer.writerow([name, _fmt(mean), _fmt(std)])


def activity_markdown(table: list[tuple[str, float, float]]) -> str:
    lines = ["| Metric | Mean | Std |", "| --- | --- | --- |"]
    for name, mean, std in table:
        lines.append(f"| {name} | {_fmt(mean)} | {_fmt(std)} |")
    return "\n".join(lines) + "\n"


def plot_activity(table: list[tuple[str, float, float]], path) -> None:
    """Bar chart of the four metrics with fold-spread error bars."""
    names = [name for name, _, _ in table]
    means = [mean for _, mean, _ in table]
    stds = [std for _, _, std in table]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(names, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Cross-validated detection metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


# --------------------------------------------------------- hourly table


def hours_table(summaries: dict[int, dict]) -> list[dict]:
    """One row per hour: the fold-mean of each metric."""
    rows = []
    for hour in sorted(summaries):
        summary = summaries[hour]
        row = {"hour": hour}
        for _, key in ACTIVITY_TABLE_ROWS:
            row[key] = summary[key]["mean"]
        rows.append(row)
    return rows


def write_hours_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(HOURS_CSV_FIELDS)
        for row in rows:
            writer.writerow([row["hour"]] + [_fmt(row[key]) for key in HOURS_CSV_FIELDS[1:]])


def hours_markdown(rows: list[dict]) -> str:
    lines = [
        "| Hour | Accuracy | Sensitivity | Precision | F1_Score |",
        "| --- | --- | --- | --- | --- |",
    ]
    for row in rows:
        cells = " | ".join(_fmt(row[key]) for key in HOURS_CSV_FIELDS[1:])
        lines.append(f"| {row['hour']} | {cells} |")
    return "\n".join(lines) + "\n"


def plot_hours(rows: list[dict], path) -> None:
    """All four metrics against snapshot hour."""
    hours = [row["hour"] for row in rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for name, key in ACTIVITY_TABLE_ROWS:
        ax.plot(hours, [row[key] for row in rows], marker="o", markersize=3, label=name)
    ax.set_xlabel("hours since pool creation")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    ax.set_title("Detection quality by snapshot hour")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


# ------------------------------------------------------- label figures


def plot_label_distribution(summary: dict, path) -> None:
    """Pie of label counts from a labeling summary."""
    by_label = summary["by_label"]
    names = sorted(by_label)
    counts = [by_label[name] for name in names]
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.pie(counts, labels=names, autopct="%1.1f%%", startangle=90)
    ax.set_title(f"Labels across {summary['n_tokens']} tokens")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_recovery_histogram(label_rows: list[dict], path) -> None:
    """Distribution of post-drop recovery for the malicious tokens."""
    values = []
    for row in label_rows:
        if row["label"] != MALICIOUS:
            continue
        rc = row["liq_rc"] if row["rule"] == RULE_FAST_RUG_PULL else row["price_rc"]
        if rc is not None:
            values.append(float(rc))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if values:
        ax.hist(values, bins=20, range=(0.0, max(0.01, max(values))), color="#a84848")
    ax.set_xlabel("recovery after maximum drop")
    ax.set_ylabel("tokens")
    ax.set_title(f"Recovery of {len(values)} malicious tokens")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)


def write_markdown_report(sections: list[tuple[str, str]], path) -> None:
    """Join (heading, body) pairs into one Markdown document."""
    parts = []
    for heading, body in sections:
        parts.append(f"## {heading}\n\n{body.rstrip()}\n")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(parts))
