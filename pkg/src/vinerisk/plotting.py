"""Figures written next to the CLI reports (PNG, headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bicop import contour_grid  # noqa: E402

# fixed metadata keeps the files byte-stable between runs
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def response_contours(model, path, levels=(0.01, 0.025, 0.05, 0.1, 0.15, 0.2)):
    """Normalized contours of the response edge of every tree."""
    edges = model.response_edges()
    k = max(len(edges), 1)
    ncol = min(k, 4)
    nrow = int(np.ceil(k / ncol))
    fig, axes = plt.subplots(nrow, ncol, figsize=(3 * ncol, 3 * nrow), squeeze=False)
    for ax in axes.ravel():
        ax.set_axis_off()
    for j, (cop, ax) in enumerate(zip(edges, axes.ravel())):
        z, g = contour_grid(cop)
        ax.set_axis_on()
        ax.contour(z, z, g.T, levels=list(levels), colors="k", linewidths=0.8)
        given = ",".join(model.column_name(c) for c in model.order[:j])
        title = f"{model.column_name(model.order[j])}" + (f" | {given}" if given else "")
        ax.set_title(f"{title}\n{cop.family.value} {cop.rotation}  tau={cop.tau:.2f}", fontsize=7)
        ax.set_xlim(-3, 3)
        ax.set_ylim(-3, 3)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    return _save(fig, path)


def risk_distribution(report, path):
    """Histogram of the logit risk with the screening threshold marked."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ok = ~report.below_floor
    if ok.any():
        ax.hist(report.logit[ok], bins=40, color="0.6", edgecolor="0.3")
    ax.axvline(np.log(report.p_threshold / (1 - report.p_threshold)), color="k", ls="--", lw=1)
    ax.set_xlabel("logit of exceedance probability")
    ax.set_ylabel("records")
    ax.set_title(f"c = {report.threshold:g}: {report.n_risky} of {report.n_records} risky,"
                 f" {report.n_records - report.n_above_floor} below floor", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def quantile_lines(y, X, grid, column: int, name: str, path, levels=(0.1, 0.5, 0.9)):
    """Fitted quantile lines against one covariate, the others held at their means."""
    X = np.asarray(X, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(X[:, column], y, s=4, c="0.6")
    xs = np.linspace(X[:, column].min(), X[:, column].max(), 50)
    base = np.tile(X.mean(axis=0), (xs.size, 1))
    base[:, column] = xs
    for a in levels:
        ax.plot(xs, grid.predict(a, base), lw=1, label=f"{a:g}")
    ax.set_xlabel(name)
    ax.set_ylabel("response")
    ax.legend(title="level", fontsize=7, title_fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def benchmark_counts(rows, path):
    """Bar chart of records with probability above the floor per model and threshold."""
    models = sorted({r["model"] for r in rows}, key=lambda m: [r["model"] for r in rows].index(m))
    cs = sorted({r["threshold"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.2))
    w = 0.8 / max(len(models), 1)
    for i, m in enumerate(models):
        vals = [next(r["n_above_floor"] for r in rows if r["model"] == m and r["threshold"] == c)
                for c in cs]
        ax.bar(np.arange(len(cs)) + i * w, vals, w, label=m)
    ax.set_xticks(np.arange(len(cs)) + w * (len(models) - 1) / 2)
    ax.set_xticklabels([f"{c:g}" for c in cs])
    ax.set_xlabel("threshold")
    ax.set_ylabel("records above floor")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
