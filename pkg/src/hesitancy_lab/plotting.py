"""Figure rendering for report outputs.

Every report-producing CLI subcommand calls into this module to drop PNG
figures next to its delimited/JSON artifacts.  The Agg backend is forced so
the pipeline runs headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 4.2),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "font.size": 9,
        "legend.fontsize": 8,
    }
)

# parameters worth showing first when a posterior has many dimensions
_HEADLINE = ("gamma_e", "gamma_p", "gamma_a", "alpha0", "rho", "beta[0]", "nu[0]")


def save_figure(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def _pick_names(names, limit=9):
    picked = [n for n in _HEADLINE if n in names]
    for n in names:
        if n not in picked:
            picked.append(n)
    return picked[:limit]


def _grid(n):
    cols = min(3, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.0 * cols, 2.4 * rows), squeeze=False)
    return fig, [ax for row in axes for ax in row]


def posterior_densities(samples, path: str, names=None) -> str:
    """Histogram per parameter with the 95% interval shaded."""
    from .inference import hdi

    names = _pick_names(names or samples.names)
    fig, axes = _grid(len(names))
    for ax, name in zip(axes, names):
        draws = samples.param(name)
        lo, hi = hdi(draws)
        ax.hist(draws, bins=40, density=True, color="#4878a8", alpha=0.85)
        ax.axvspan(lo, hi, color="#4878a8", alpha=0.15)
        ax.set_title(name)
        ax.set_yticks([])
    for ax in axes[len(names):]:
        ax.set_visible(False)
    fig.suptitle("posterior densities (95% HDI shaded)")
    return save_figure(fig, path)


def trace_plots(samples, path: str, names=None) -> str:
    names = _pick_names(names or samples.names, limit=6)
    fig, axes = _grid(len(names))
    for ax, name in zip(axes, names):
        chains = samples.draws[:, :, samples.names.index(name)]
        for c in range(chains.shape[0]):
            ax.plot(chains[c], lw=0.6, alpha=0.8)
        ax.set_title(name)
    for ax in axes[len(names):]:
        ax.set_visible(False)
    fig.suptitle("sampler traces by chain")
    return save_figure(fig, path)


def trajectory_overview(traj, region_ids, path: str) -> str:
    """Aggregate compartment curves plus per-region hesitancy."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    t = np.arange(traj.S.shape[0])
    for arr, label in ((traj.S, "S"), (traj.I, "I"), (traj.R, "R"), (traj.V, "V")):
        ax1.plot(t, arr.sum(axis=1), label=label)
    ax1.set_xlabel("interval")
    ax1.set_ylabel("people (all regions)")
    ax1.legend(ncol=4)
    ax1.set_title("compartments")

    for i, rid in enumerate(region_ids):
        ax2.plot(t, traj.alpha[:, i], lw=0.8, label=rid if len(region_ids) <= 8 else None)
    ax2.set_xlabel("interval")
    ax2.set_ylabel("hesitant fraction")
    ax2.set_ylim(0, 1)
    if len(region_ids) <= 8:
        ax2.legend(fontsize=7)
    ax2.set_title("hesitancy by region")
    return save_figure(fig, path)


def exposure_heatmap(exposure, path: str) -> str:
    fig, ax = plt.subplots()
    im = ax.imshow(exposure.E, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_xlabel("interval")
    ax.set_ylabel("region")
    ax.set_yticks(range(len(exposure.region_ids)))
    ax.set_yticklabels(exposure.region_ids, fontsize=6)
    fig.colorbar(im, ax=ax, label="per-capita weighted exposure")
    ax.set_title("exposure surface")
    return save_figure(fig, path)


def effect_distribution(draws, report, path: str, label: str = "ATE") -> str:
    fig, ax = plt.subplots()
    ax.hist(draws, bins=50, density=True, color="#a85448", alpha=0.85)
    ax.axvline(report.mean, color="k", lw=1.2, label=f"mean {report.mean:.3g}")
    ax.axvline(report.hdi_low, color="k", lw=0.8, ls="--")
    ax.axvline(report.hdi_high, color="k", lw=0.8, ls="--",
               label=f"95% HDI [{report.hdi_low:.3g}, {report.hdi_high:.3g}]")
    ax.axvline(0.0, color="0.4", lw=0.8, ls=":")
    ax.set_xlabel(label)
    ax.set_yticks([])
    ax.legend()
    ax.set_title(f"posterior distribution of {label}")
    return save_figure(fig, path)


def counterfactual_curves(t, v_obs, v_zero, path: str) -> str:
    fig, ax = plt.subplots()
    ax.plot(t, v_obs, label="observed exposure", color="#a85448")
    ax.plot(t, v_zero, label="zero exposure", color="#4878a8")
    ax.fill_between(t, v_obs, v_zero, color="0.8", alpha=0.5)
    ax.set_xlabel("interval")
    ax.set_ylabel("cumulative vaccinations (all regions)")
    ax.legend()
    ax.set_title("counterfactual vaccination paths (posterior mean)")
    return save_figure(fig, path)


def risk_contributions(inputs, path: str) -> str:
    """Per-interval case hazard among the unvaccinated."""
    n_unvacc = inputs.population - inputs.cases_total
    haz = np.asarray(inputs.delta_cases, dtype=float) / n_unvacc
    cover = (np.asarray(inputs.vaccinated, dtype=float) / n_unvacc) * (1.0 - inputs.lambda_c)
    cover = cover + (n_unvacc - np.asarray(inputs.vaccinated, dtype=float)) / n_unvacc
    fig, ax = plt.subplots()
    ax.bar(np.arange(haz.size), haz / cover, color="#4878a8")
    ax.set_xlabel("interval")
    ax.set_ylabel("unvaccinated infection probability")
    ax.set_title("per-interval risk terms")
    return save_figure(fig, path)


def attribution_bars(report, path: str) -> str:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 3.2))
    ax1.bar(["cases"], [report.attributable_cases], color="#a85448")
    ax2.bar(["deaths"], [report.attributable_deaths], color="#5f5f8f")
    for ax, val in ((ax1, report.attributable_cases), (ax2, report.attributable_deaths)):
        ax.text(0, val, f"{val:.1f}", ha="center", va="bottom")
        ax.set_ylim(0, max(val * 1.2, 1e-9))
    fig.suptitle(
        f"outcomes attributable to {report.delta_v:.0f} prevented vaccinations"
    )
    return save_figure(fig, path)


def pareto_k_plot(report, path: str) -> str:
    fig, ax = plt.subplots()
    k = np.asarray(report.pareto_k, dtype=float)
    colors = np.where(k > 0.7, "#a85448", "#4878a8")
    ax.scatter(np.arange(k.size), k, s=8, c=colors)
    ax.axhline(0.7, color="k", lw=0.8, ls="--", label="k = 0.7")
    ax.set_xlabel("observation")
    ax.set_ylabel("Pareto k")
    ax.legend()
    ax.set_title(f"PSIS diagnostics ({report.label}): {report.n_bad_k} high-k points")
    return save_figure(fig, path)


def panel_overview(dataset, path: str, max_regions: int = 8) -> str:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    t = np.arange(dataset.n_boundaries)
    for i in range(min(dataset.n_regions, max_regions)):
        ax1.plot(t, dataset.C[i], lw=0.8)
        ax2.plot(t, dataset.V[i], lw=0.8, label=dataset.region_ids[i])
    ax1.set_title("cumulative cases")
    ax2.set_title("cumulative vaccinations")
    for ax in (ax1, ax2):
        ax.set_xlabel("interval")
    ax2.legend(fontsize=6)
    return save_figure(fig, path)


def null_effect_density(draws, path: str) -> str:
    fig, ax = plt.subplots()
    ax.hist(draws, bins=50, density=True, color="#6a8f5f", alpha=0.85)
    ax.axvline(0.0, color="k", lw=1.0, label="zero effect")
    ax.set_xlabel("exposure coefficient under shuffled exposure")
    ax.set_yticks([])
    ax.legend()
    ax.set_title("permutation-null posterior")
    return save_figure(fig, path)
