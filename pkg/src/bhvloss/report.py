"""Figures for the pipeline: Pareto scatter, coefficient trends, error histogram.

Every figure is written as SVG together with a CSV sidecar holding the
plotted numbers, so results can be checked without comparing images.
"""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "bhvloss"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, svg_path):
    fig.savefig(svg_path, format="svg", metadata={"Date": None, "Creator": "bhvloss"})
    plt.close(fig)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def pareto_figure(candidates, svg_path, csv_path):
    """Complexity vs RMSE of the selected candidates, annotated with N_run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if candidates:
        x = [c["f_complexity"] for c in candidates]
        y = [c["rmse"] for c in candidates]
        ax.scatter(x, y, c=[c["n_run"] for c in candidates], cmap="viridis")
        for k, c in enumerate(candidates):
            ax.annotate(f"#{k + 1}", (x[k], y[k]), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("F_complexity")
    ax.set_ylabel("RMSE [W]")
    ax.set_title("Repeatable Pareto-optimal models")
    _save(fig, svg_path)
    _write_csv(csv_path, ["id", "f_complexity", "rmse", "n_run", "n_gen", "mu_err",
                          "sigma_err", "err_max", "model"],
               [[k + 1, c["f_complexity"], c["rmse"], c["n_run"], c["n_gen"], c["mu_err"],
                 c["sigma_err"], c["err_max"], c["model"]] for k, c in enumerate(candidates)])


def coefficient_figure(surface, svg_path, csv_path):
    """Per-condition coefficients vs V_dr with the fitted surface curves."""
    pts = np.array(surface.points, dtype=float)
    keys = sorted(surface.surfaced)
    fig, axes = plt.subplots(1, max(len(keys), 1), figsize=(4 * max(len(keys), 1), 3.5),
                             squeeze=False)
    rows = []
    v_fine = np.linspace(pts[:, 0].min(), pts[:, 0].max(), 41) if len(pts) else np.array([])
    for ax, k in zip(axes[0], keys):
        for r_g in np.unique(pts[:, 1]):
            sel = pts[:, 1] == r_g
            ax.plot(pts[sel, 0], pts[sel, 2 + k], "o", label=f"R_g={r_g:g}")
            ax.plot(v_fine, surface.surfaced[k](v_fine, r_g), "-", color=ax.lines[-1].get_color())
            for v, pk in zip(pts[sel, 0], pts[sel, 2 + k]):
                rows.append([f"p{k}", v, r_g, pk, float(surface.surfaced[k](v, r_g))])
        ax.set_xlabel("V_dr [V]")
        ax.set_ylabel(f"p{k}")
        ax.legend(fontsize="small")
    _save(fig, svg_path)
    _write_csv(csv_path, ["coefficient", "v_dr", "r_g", "fitted", "surface"], rows)


def error_histogram(errors, svg_path, csv_path, bins: int = 30):
    """Histogram (density) of percent errors with a normal PDF of the same mean/std."""
    errors = np.asarray(errors, dtype=float).ravel()
    mu, sigma = float(errors.mean()), float(errors.std())
    counts, edges = np.histogram(errors, bins=bins, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    pdf = (np.exp(-0.5 * ((centers - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
           if sigma > 0 else np.zeros_like(centers))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, counts, width=np.diff(edges), alpha=0.6, label="errors")
    xs = np.linspace(edges[0], edges[-1], 200)
    if sigma > 0:
        ax.plot(xs, np.exp(-0.5 * ((xs - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi)),
                "r-", label=f"normal PDF (mu={mu:.2f}%, sigma={sigma:.2f}%)")
    ax.set_xlabel("percent error [%]")
    ax.set_ylabel("density")
    ax.legend(fontsize="small")
    _save(fig, svg_path)
    _write_csv(csv_path, ["bin_left", "bin_right", "density", "normal_pdf"],
               [[edges[k], edges[k + 1], counts[k], pdf[k]] for k in range(len(counts))])
    return mu, sigma
