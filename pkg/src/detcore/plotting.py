"""Figure rendering for training logs and PR curves.

Figures are built on the object API (no pyplot state) and saved with a
fixed hash salt and no date stamp, so identical inputs give identical
SVG bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

from matplotlib import rcParams  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

_SVG_SALT = "detcore"


def _save(fig: Figure, path) -> None:
    rcParams["svg.hashsalt"] = _SVG_SALT
    fmt = str(path).rsplit(".", 1)[-1].lower()
    metadata = {"Date": None} if fmt in ("svg", "pdf") else None
    fig.savefig(path, format=fmt, metadata=metadata)


def plot_training_curve(log, path, title: str | None = None) -> None:
    """Loss (left axis, log scale when positive) and task metric (right axis) vs step."""
    steps = [r[0] for r in log.rows]
    loss = [r[1] for r in log.rows]
    metric = [r[2] for r in log.rows]
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot(111)
    ax.plot(steps, loss, color="tab:blue", lw=1.5, label="loss")
    if loss and min(loss) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss", color="tab:blue")
    twin = ax.twinx()
    twin.plot(steps, metric, color="tab:orange", lw=1.5, label=log.metric_name)
    twin.set_ylabel(log.metric_name, color="tab:orange")
    twin.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_pr_curves(report, path) -> None:
    """Step PR curves at IoU 0.5, one line per class, AP in the legend."""
    fig = Figure(figsize=(5.0, 4.5))
    ax = fig.add_subplot(111)
    for cid in sorted(report.curves):
        curve = report.curves[cid]
        name = report.categories.get(cid, str(cid))
        recall = [0.0, *curve.recall.tolist()]
        precision = [1.0, *curve.precision.tolist()] if len(curve) else [1.0]
        ax.step(recall, precision, where="post",
                label=f"{name} (AP50={report.ap[cid][0.5]:.3f})")
    ax.set_xlim(0, 1.01)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"mAP@0.5 = {report.map_50:.3f}")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
