"""Figure output for CLI runs. Everything here is cosmetic."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .engine import SimulationTrace, last_beat  # noqa: E402
from .params import CHAMBERS  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.bbox": "tight",
    "svg.hashsalt": "hypertwin",  # stable element ids across runs
}

PANEL_VARIABLES = ("p_LV", "Q_AV", "p_AR_SYS", "Q_AR_SYS", "p_RV", "p_AR_PUL")


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def pv_loops(traces: Mapping[str, SimulationTrace], path: str | Path) -> Path:
    """Final-beat pressure-volume loops of all four chambers, one curve per labelled trace."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(7, 6))
        for ax, ch in zip(axes.ravel(), CHAMBERS):
            for label, tr in traces.items():
                b = last_beat(tr)
                ax.plot(b[f"V_{ch}"], b[f"p_{ch}"], label=label)
            ax.set_title(ch)
            ax.set_xlabel("V [mL]")
            ax.set_ylabel("p [mmHg]")
        axes[0, 0].legend(frameon=False, fontsize=7)
        return _save(fig, path)


def time_series(traces: Mapping[str, SimulationTrace], path: str | Path,
                variables: Sequence[str] = PANEL_VARIABLES) -> Path:
    """Final-beat time courses, one panel per variable."""
    n = len(variables)
    cols = 2
    rows = int(np.ceil(n / cols))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(7, 2.2 * rows), squeeze=False)
        for ax, v in zip(axes.ravel(), variables):
            for label, tr in traces.items():
                b = last_beat(tr)
                if v in b:
                    ax.plot(b.time - b.time[0], b[v], label=label)
            ax.set_title(v)
            ax.set_xlabel("t [s]")
        for ax in axes.ravel()[n:]:
            ax.set_visible(False)
        axes[0, 0].legend(frameon=False, fontsize=7)
        return _save(fig, path)


def sobol_heatmap(parameters: Sequence[str], outputs: Sequence[str], S: np.ndarray,
                  path: str | Path, threshold: float = 0.2) -> Path:
    """Total indices at or above ``threshold``; smaller cells are left blank."""
    S = np.asarray(S, dtype=float)
    keep_r = (S >= threshold).any(axis=1)
    keep_c = (S >= threshold).any(axis=0)
    if not keep_r.any():
        keep_r[:] = True
        keep_c[:] = True
    sub = np.where(S[np.ix_(keep_r, keep_c)] >= threshold, S[np.ix_(keep_r, keep_c)], np.nan)
    rows = [p for p, k in zip(parameters, keep_r) if k]
    cols = [o for o, k in zip(outputs, keep_c) if k]
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(0.35 * len(cols) + 3, 0.3 * len(rows) + 1.5))
        im = ax.imshow(sub, cmap="viridis", vmin=threshold, vmax=1.0, aspect="auto")
        ax.set_xticks(range(len(cols)), cols, rotation=90, fontsize=7)
        ax.set_yticks(range(len(rows)), rows, fontsize=7)
        fig.colorbar(im, ax=ax, label="total index")
        return _save(fig, path)


def error_trajectory(errors: Sequence[float], path: str | Path,
                     thresholds: Sequence[float] = (1.5, 0.92)) -> Path:
    """Accepted matching errors on a log axis with the threshold lines."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.semilogy(np.arange(len(errors)), errors, color="tab:blue")
        for th, ls in zip(thresholds, ("--", ":")):
            ax.axhline(th, color="tab:red", ls=ls, lw=1)
        ax.set_xlabel("accepted step")
        ax.set_ylabel("error")
        return _save(fig, path)


def loss_study_panels(rows, path: str | Path) -> Path:
    """Calibration time and total deviation per loss function, one line per case."""
    cases = sorted({(r.condition, r.severity) for r in rows})
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
        for case in cases:
            sel = sorted((r for r in rows if (r.condition, r.severity) == case), key=lambda r: r.loss_id)
            ids = [r.loss_id for r in sel]
            a1.plot(ids, [r.time for r in sel], marker="o", label="-".join(case))
            a2.plot(ids, [r.deviation for r in sel], marker="o")
        a1.set_xlabel("loss id")
        a1.set_ylabel("time [s]")
        a2.set_xlabel("loss id")
        a2.set_ylabel("total deviation")
        a1.legend(frameon=False, fontsize=6)
        return _save(fig, path)
