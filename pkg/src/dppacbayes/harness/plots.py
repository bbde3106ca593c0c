"""Static SVG figures of errors and risk bounds against the temperature."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "svg.hashsalt": "dppacbayes",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.2,
    "lines.markersize": 3.5,
}

_SERIES = (
    ("train_err01", "train error", "C0", "o"),
    ("test_err01", "test error", "C1", "s"),
    ("gap", "test - train", "C2", "^"),
    ("risk_bound_lever", "Lever bound", "C3", "v"),
    ("risk_bound_dp", "DP PAC-Bayes bound", "C4", "D"),
)


def _final_rows(reports):
    last = {}
    for r in reports:
        if not r.completed:
            continue
        key = (r.dataset, r.label_mode, r.procedure, r.tau, r.seed)
        if key not in last or r.epoch >= last[key].epoch:
            last[key] = r
    return list(last.values())


def _aggregate(rows):
    """Mean of each series over seeds, per temperature."""
    by_tau = defaultdict(list)
    for r in rows:
        by_tau[r.tau].append(r)
    taus = sorted(by_tau)
    out = {"tau": np.array(taus)}
    for name, *_ in _SERIES:
        vals = []
        for t in taus:
            if name == "gap":
                xs = [r.test_err01 - r.train_err01 for r in by_tau[t]]
            else:
                xs = [getattr(r, name) for r in by_tau[t]]
            xs = [x for x in xs if not math.isnan(x)]
            vals.append(float(np.mean(xs)) if xs else math.nan)
        out[name] = np.array(vals)
    return out


def emit_plots(reports, out_dir, delta: float | None = None) -> list[Path]:
    """One SVG per (dataset, label mode, procedure) using each run's final row.

    Identical input gives identical bytes.
    """
    rows = _final_rows(reports)
    if not rows:
        raise ValueError("no completed reports to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = defaultdict(list)
    for r in rows:
        groups[(r.dataset, r.label_mode, r.procedure)].append(r)

    paths = []
    with plt.rc_context(_RC):
        for (dataset, label_mode, procedure), grp in sorted(groups.items()):
            agg = _aggregate(grp)
            fig, ax = plt.subplots(figsize=(4.2, 3.0))
            for name, label, color, marker in _SERIES:
                y = agg[name]
                if np.all(np.isnan(y)):
                    continue
                ax.plot(agg["tau"], np.clip(y, 0.0, 1.0), color=color, marker=marker, label=label)
            ax.set_xscale("log")
            ax.set_ylim(0.0, 1.0)
            ax.set_xlabel(r"$\tau_2$" if procedure == "two-stage" else r"$\tau$")
            ax.set_ylabel("0-1 loss")
            n_seeds = len({r.seed for r in grp})
            ax.set_title(f"{dataset}, {label_mode} labels, {procedure}")
            note = f"{n_seeds} seed(s)" + (f", $\\delta$={delta:g}" if delta is not None else "")
            ax.text(0.02, 0.97, note, transform=ax.transAxes, va="top", fontsize=7)
            ax.legend(loc="center right", frameon=False)
            fig.tight_layout()
            path = out_dir / f"{dataset}_{label_mode}_{procedure}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
