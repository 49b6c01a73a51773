"""Report figures and delimited margin tables written next to JSON reports."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["margin_rows", "write_margin_table", "plot_margins", "plot_voltages", "plot_survey"]

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def margin_rows(report: dict) -> list[dict]:
    """One row per load from a serialized feasibility report."""
    rows = []
    for i, nid in enumerate(report["load_ids"]):
        lhs, rhs = report["lhs"][i], report["rhs"][i]
        rows.append({
            "condition": report["condition"],
            "node": nid,
            "lhs": lhs,
            "rhs": rhs,
            "slack": rhs - lhs,
        })
    return rows


def write_margin_table(path: str | Path, rows: Iterable[dict]) -> None:
    rows = list(rows)
    fields = list(rows[0]) if rows else ["condition", "node", "lhs", "rhs", "slack"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v)
                             for k, v in row.items()})


def plot_margins(path: str | Path, reports: Sequence[dict], title: str = "") -> None:
    """Grouped bars of both sides of each tested inequality, per load node."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(len(reports), 1, squeeze=False,
                                 figsize=(7.0, 2.4 * max(len(reports), 1)))
        for ax, rep in zip(axes[:, 0], reports):
            ids = rep["load_ids"]
            x = np.arange(len(ids))
            ax.bar(x - 0.2, rep["lhs"], width=0.4, label="left-hand side", color="0.35")
            ax.bar(x + 0.2, rep["rhs"], width=0.4, label="right-hand side", color="0.75")
            ax.set_xticks(x)
            ax.set_xticklabels([str(i) for i in ids])
            ax.set_xlabel("load node")
            margin = rep["margin"]
            margin = "n/a" if margin is None else format(margin, ".3g")
            ax.set_title(f"{rep['condition']}: {rep.get('verdict', '')}, margin {margin}",
                         loc="left")
            ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_voltages(path: str | Path, load_ids, v_load, v_open=None) -> None:
    """Solved load voltages against the open-circuit voltages."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 2.6))
        x = np.arange(len(load_ids))
        if v_open is not None:
            ax.plot(x, v_open, "o", mfc="none", color="0.5", label="open circuit")
        if v_load is not None:
            ax.plot(x, v_load, "s", color="0.1", label="solution")
        ax.set_xticks(x)
        ax.set_xticklabels([str(i) for i in load_ids])
        ax.set_xlabel("load node")
        ax.set_ylabel("voltage [V]")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_survey(path: str | Path, thm1_margins, thm6_margins) -> None:
    """Scatter of per-grid margins of the two certificates."""
    a = np.asarray(thm1_margins, dtype=float)
    b = np.asarray(thm6_margins, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        ax.scatter(a, b, s=6, color="0.2")
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.axvline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("open-circuit condition margin")
        ax.set_ylabel("block condition margin")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
