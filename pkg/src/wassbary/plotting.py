"""Static figures rendered with the Agg backend.

PNG metadata is stripped so that repeated runs write identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render", "experiment_figure"]

_COLOURS = ("black", "tab:red", "tab:green", "tab:blue", "tab:orange", "tab:purple")
_MEAN = "deepskyblue"
_DPI = 100


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)


def _lines(path, payload) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, (x, y, label) in enumerate(payload["curves"]):
        ax.plot(x, y, color=_COLOURS[k % len(_COLOURS)], lw=1, label=label)
    if "mean" in payload:
        x, y = payload["mean"]
        ax.plot(x, y, color=_MEAN, lw=3, label="Fréchet mean")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _contours(path, payload) -> None:
    panels = payload["panels"]
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3), squeeze=False)
    for ax, (gx, gy, z, title) in zip(axes[0], panels):
        ax.contourf(gx, gy, z, levels=20, cmap="viridis")
        ax.set_title(title, fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    _save(fig, path)


def _quiver(path, payload) -> None:
    fields = payload["fields"]
    fig, axes = plt.subplots(1, len(fields), figsize=(3 * len(fields), 3), squeeze=False)
    for k, (ax, (pts, disp, title)) in enumerate(zip(axes[0], fields)):
        ax.quiver(pts[:, 0], pts[:, 1], disp[:, 0], disp[:, 1], color=_COLOURS[k % len(_COLOURS)])
        ax.set_title(title, fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    _save(fig, path)


def _scatter3d(path, payload) -> None:
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    for k, (pts, label) in enumerate(payload["sets"]):
        if len(pts) == 0:
            continue
        mean = label == "Fréchet mean"
        ax.scatter(
            pts[:, 0], pts[:, 1], pts[:, 2], s=1,
            color=_MEAN if mean else _COLOURS[k % len(_COLOURS)], label=label,
        )
    ax.legend(fontsize=8, markerscale=6)
    _save(fig, path)


_KINDS = {"lines": _lines, "contours": _contours, "quiver": _quiver, "scatter3d": _scatter3d}


def render(path, kind: str, payload: dict) -> None:
    _KINDS[kind](path, payload)


def experiment_figure(path, rows) -> None:
    """Median estimation errors against the number of patterns."""
    ok = [r for r in rows if r["status"] == "ok"]
    ns = sorted({r["n"] for r in ok})
    fig, ax = plt.subplots(figsize=(5, 4))
    for key, label in (("d_lambda", "d(mean estimate, truth)"), ("sup_Tinv_err", "sup inverse-warp error")):
        med = [np.median([r[key] for r in ok if r["n"] == n]) for n in ns]
        ax.plot(ns, med, marker="o", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
