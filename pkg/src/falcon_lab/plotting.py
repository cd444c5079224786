"""Figures written next to the CLI's text outputs.

Uses the non-interactive Agg backend and strips the software tag from PNG
metadata so identical inputs give identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def _smooth(y: np.ndarray, width: int) -> np.ndarray:
    if len(y) < width or width <= 1:
        return y
    return np.convolve(y, np.ones(width) / width, mode="valid")


def loss_curves(records: list[dict], keys: list[str], path, title: str = "") -> None:
    """Moving-average loss curves from a metrics stream."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if records:
        width = max(1, len(records) // 50)
        for k in keys:
            y = _smooth(np.array([r[k] for r in records], dtype=float), width)
            ax.plot(np.arange(len(y)) + width // 2, y, label=k, lw=1.2)
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    _save(fig, path)


def sweep_heatmap(summary: list[dict], names: tuple[str, ...], path) -> None:
    """Mean mAP over seeds: a heatmap for two parameters, a line for one."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    if len(names) == 2:
        xs = sorted({r[names[0]] for r in summary})
        ys = sorted({r[names[1]] for r in summary})
        grid = np.full((len(ys), len(xs)), np.nan)
        for r in summary:
            grid[ys.index(r[names[1]]), xs.index(r[names[0]])] = 100 * r["mean"]
        im = ax.imshow(grid, origin="lower", cmap="viridis")
        for (i, j), v in np.ndenumerate(grid):
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_xticks(range(len(xs)), [f"{x:g}" for x in xs])
        ax.set_yticks(range(len(ys)), [f"{y:g}" for y in ys])
        ax.set_xlabel(names[0])
        ax.set_ylabel(names[1])
        fig.colorbar(im, ax=ax, label="mAP@0.5")
    else:
        key = names[0]
        rows = sorted(summary, key=lambda r: r[key])
        x = [r[key] for r in rows]
        ax.errorbar(x, [100 * r["mean"] for r in rows], yerr=[100 * r["std"] for r in rows],
                    marker="o", capsize=3)
        if key == "m":
            ax.set_xscale("log")
        ax.set_xlabel(key)
        ax.set_ylabel("mAP@0.5")
    _save(fig, path)


def theorem2_terms(report: dict, path) -> None:
    """Measured delta and the additive bound against the multiplicative one."""
    terms = sorted(report["terms"], key=lambda t: t["epsilon"])
    eps = [t["epsilon"] for t in terms]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(eps, [t["delta"] for t in terms], "o-", label="delta")
    ax.plot(eps, [t["additive"] for t in terms], "s-", label="2d + 2wd/a")
    ax.axhline(report["multiplicative_bound"], color="k", ls="--", label="R_noisy / lambda")
    ax.set_xscale("log")
    ax.set_xlabel("epsilon")
    ax.legend(frameon=False)
    _save(fig, path)
