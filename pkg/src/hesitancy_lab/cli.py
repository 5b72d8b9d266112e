"""Command-line pipeline: config-driven, seeded, artifact-oriented.

Every subcommand reads one JSON config, writes reports under the configured
output directory, and renders figures under ``<out>/figures``. Exit codes:
0 success, 2 invalid config or data, 3 missing required artifact,
4 sampler diagnostics failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import glob
import hashlib
import json
import os
import sys

import numpy as np

from .data_io import RunConfig, read_json, to_jsonable, write_report
from .errors import DiagnosticsError, InputError, MissingArtifactError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hesitancy-lab",
        description="exposure-driven vaccine-hesitancy epidemic pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth": "generate a synthetic panel/network pair",
        "simulate": "integrate the compartment model over a loaded panel",
        "fit": "sample the posterior for the configured model variant",
        "ate": "estimate the exposure effect from a stored posterior",
        "counterfactual": "re-simulate stored draws under zero exposure",
        "risk": "unvaccinated risk and outcome attribution",
        "loo": "pointwise model assessment via PSIS-LOO",
        "shuffle-test": "refit with permuted exposure as a null check",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to config.json")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for chain execution")
        p.add_argument("--out", default=None, help="override output directory")
        if name == "fit":
            p.add_argument("--variant", default=None,
                           help="override the configured model variant")
        if name in ("fit", "shuffle-test"):
            p.add_argument("--allow-bad-diagnostics", action="store_true",
                           help="write artifacts even when R-hat/divergence "
                                "checks fail")
    return parser


def _configure(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(args.seed))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if getattr(args, "variant", None) is not None:
        cfg = dataclasses.replace(cfg, model_variant=args.variant)
    return cfg.validate()


def _provenance(cfg: RunConfig) -> dict:
    import matplotlib
    import scipy

    from . import __version__

    cfg_json = json.dumps(to_jsonable(dataclasses.asdict(cfg)), sort_keys=True)
    return {
        "config_sha256": hashlib.sha256(cfg_json.encode("utf-8")).hexdigest(),
        "seed": cfg.seed,
        "versions": {
            "hesitancy_lab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "python": sys.version.split()[0],
        },
        # excluded from determinism comparisons
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _out(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _fig(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, "figures", name)


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(f"required artifact missing: {path} ({hint})")
    return path


def _load_dataset(cfg: RunConfig):
    from .data_io import load_dataset, subsample_regions

    if not cfg.panel or not cfg.network:
        raise InputError("config must set paths.panel and paths.network")
    _require(cfg.panel, "panel input")
    _require(cfg.network, "network input")
    dataset = load_dataset(cfg.panel, cfg.network, cfg)
    if cfg.subsample_regions is not None:
        dataset = subsample_regions(dataset, cfg.subsample_regions, cfg.seed)
    return dataset


def _read_samples(cfg: RunConfig, dataset):
    from .inference import read_posterior_samples

    posterior = _require(_out(cfg, "posterior.csv"), "run `hesitancy-lab fit` first")
    diag_path = _require(_out(cfg, "diagnostics.json"), "run `hesitancy-lab fit` first")
    meta = read_json(diag_path)["meta"]
    return read_posterior_samples(posterior, meta, dataset)


def _params_from_mapping(raw: dict, n_beta: int, n_nu: int):
    """Build ModelParams from a config section, expanding scalar beta/nu."""
    from .dynamics import ModelParams

    def piecewise(key, default, n):
        v = raw.get(key, default)
        arr = np.atleast_1d(np.asarray(v, dtype=float))
        if arr.size == 1:
            arr = np.full(n, arr[0])
        return arr

    return ModelParams(
        beta=piecewise("beta", 0.2, n_beta),
        rho=float(raw.get("rho", 0.1)),
        nu=piecewise("nu", 0.0025, n_nu),
        gamma_e=float(raw.get("gamma_e", 0.18)),
        gamma_p=float(raw.get("gamma_p", 0.005)),
        gamma_a=float(raw.get("gamma_a", 0.0)),
        alpha0=np.asarray(raw.get("alpha0", 0.2), dtype=float),
        phi=np.asarray(raw.get("phi", (10.0, 10.0, 10.0, 10.0)), dtype=float),
    ).validate()


def _n_periods(intervals: int, period: int) -> int:
    return max(1, -(-intervals // period))


def cmd_synth(cfg: RunConfig, args) -> int:
    from . import plotting
    from .data_io import PANEL_COLUMNS, NETWORK_COLUMNS
    from .dynamics import EpidemicState, generate_synthetic
    from .seeding import substream

    raw = cfg.synth
    n_regions = int(raw.get("regions", 5))
    intervals = int(raw.get("intervals", 24))
    population = float(raw.get("population", 1e5))
    params = _params_from_mapping(
        raw,
        _n_periods(intervals, cfg.beta_period_intervals),
        _n_periods(intervals, cfg.nu_period_intervals),
    )
    # exposure surface: lognormal region baselines with a slow seasonal swing,
    # generated from a child of the synth stream so the noise draws inside
    # generate_synthetic stay untouched
    rng = np.random.default_rng(substream(cfg.seed, "synth").spawn(1)[0])
    scale = float(raw.get("exposure_scale", 2e-3))
    base = rng.lognormal(mean=np.log(scale), sigma=0.6, size=(n_regions, 1))
    wave = 1.0 + 0.4 * np.sin(2.0 * np.pi * np.arange(intervals) / max(intervals, 1))
    E = base * wave * rng.lognormal(mean=0.0, sigma=0.15, size=(n_regions, intervals))

    infected = float(raw.get("initial_infected_fraction", 0.002)) * population
    vaccinated = float(raw.get("initial_vaccinated_fraction", 0.01)) * population
    init = EpidemicState(
        S=np.full(n_regions, population - infected - vaccinated),
        I=np.full(n_regions, infected),
        R=np.zeros(n_regions),
        V=np.full(n_regions, vaccinated),
        alpha=np.broadcast_to(params.alpha0, (n_regions,)).astype(float),
        N=np.full(n_regions, population),
    )
    dataset = generate_synthetic(
        params, init, E, intervals,
        seed=cfg.seed,
        interval_days=cfg.interval_days,
        substeps=cfg.effective_substeps(),
        beta_period=cfg.beta_period_intervals,
        nu_period=cfg.nu_period_intervals,
        variant=cfg.model_variant,
    )

    panel_rows = []
    for i, rid in enumerate(dataset.region_ids):
        for t, date in enumerate(dataset.dates):
            posts = dataset.posts[i, t] if t < intervals else 0.0
            cases = dataset.C[i, t]
            panel_rows.append((
                rid, date.isoformat(), dataset.N[i], cases,
                float(np.floor(0.015 * cases)), dataset.V[i, t], posts,
            ))
    write_report((PANEL_COLUMNS, panel_rows), _out(cfg, "panel.csv"))
    network_rows = [(rid, rid, 1.0) for rid in dataset.region_ids]
    write_report((NETWORK_COLUMNS, network_rows), _out(cfg, "network.csv"))
    write_report(
        {
            "regions": n_regions,
            "intervals": intervals,
            "population": population,
            "params": to_jsonable(dataclasses.asdict(params)),
            "files": ["panel.csv", "network.csv"],
            "provenance": _provenance(cfg),
        },
        _out(cfg, "synth.json"),
    )
    plotting.panel_overview(dataset, _fig(cfg, "panel.png"))
    print(f"wrote synthetic panel for {n_regions} regions x {intervals} intervals "
          f"under {cfg.out_dir}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    from . import plotting
    from .dynamics import EpidemicState, simulate, trajectory_table
    from .exposure import compute_exposure

    dataset = _load_dataset(cfg)
    exposure = compute_exposure(dataset)
    dataset = dataset.restrict(exposure.region_ids)
    horizon = int(cfg.simulate.get("intervals", dataset.n_intervals))
    if horizon < 0:
        raise InputError("simulate.intervals must be >= 0")
    params = _params_from_mapping(
        cfg.simulate,
        _n_periods(max(horizon, 1), cfg.beta_period_intervals),
        _n_periods(max(horizon, 1), cfg.nu_period_intervals),
    )
    init = EpidemicState(
        S=dataset.S[:, 0], I=dataset.I[:, 0], R=dataset.R[:, 0],
        V=dataset.V[:, 0],
        alpha=np.broadcast_to(params.alpha0, (dataset.n_regions,)).astype(float),
        N=dataset.N,
    )
    traj = simulate(
        init, params, exposure.E,
        horizon=horizon,
        substeps=cfg.effective_substeps(),
        interval_days=cfg.interval_days,
        beta_period=cfg.beta_period_intervals,
        nu_period=cfg.nu_period_intervals,
        variant=cfg.model_variant,
    )
    header, rows = trajectory_table(traj, dataset.region_ids)
    if horizon == 0:
        rows = []
    write_report((header, rows), _out(cfg, "trajectory.csv"))
    write_report(
        {
            "variant": cfg.model_variant,
            "intervals": horizon,
            "regions": list(dataset.region_ids),
            "excluded_regions": list(exposure.excluded),
            "params": to_jsonable(dataclasses.asdict(params)),
            "provenance": _provenance(cfg),
        },
        _out(cfg, "simulate.json"),
    )
    plotting.trajectory_overview(traj, dataset.region_ids, _fig(cfg, "trajectories.png"))
    print(f"simulated {horizon} intervals for {dataset.n_regions} regions")
    return 0


def cmd_fit(cfg: RunConfig, args) -> int:
    from . import plotting
    from .exposure import compute_exposure, exposure_table
    from .inference import posterior_table, sample_posterior

    dataset = _load_dataset(cfg)
    exposure = compute_exposure(dataset)
    sampler = dataclasses.replace(cfg.sampler, seed=cfg.seed).validate()
    samples = sample_posterior(
        dataset,
        sampler,
        exposure=exposure,
        variant=cfg.model_variant,
        beta_period=cfg.beta_period_intervals,
        nu_period=cfg.nu_period_intervals,
        substeps=cfg.substeps,
        threads=args.threads,
    )
    diag = samples.diagnostics()
    write_report(posterior_table(samples), _out(cfg, "posterior.csv"))
    write_report(exposure_table(exposure), _out(cfg, "exposure.csv"))
    write_report(
        {"diagnostics": diag, "meta": samples.meta, "provenance": _provenance(cfg)},
        _out(cfg, "diagnostics.json"),
    )
    plotting.posterior_densities(samples, _fig(cfg, "posterior.png"))
    plotting.trace_plots(samples, _fig(cfg, "traces.png"))
    plotting.exposure_heatmap(exposure, _fig(cfg, "exposure.png"))
    bad = diag["divergence_warning"] or diag["bad_r_hat"]
    if bad and not args.allow_bad_diagnostics:
        raise DiagnosticsError(
            f"sampler diagnostics failed (max R-hat {diag['max_r_hat']:.3f}, "
            f"divergence fraction {diag['divergence_fraction']:.3f}); artifacts "
            f"were written; rerun with --allow-bad-diagnostics to accept them"
        )
    print(f"fit {cfg.model_variant}: {samples.n_chains} chains x "
          f"{samples.n_draws} draws, max R-hat {diag['max_r_hat']:.3f}")
    return 0


def cmd_ate(cfg: RunConfig, args) -> int:
    from . import plotting
    from .causal import ate_draws, prevented_vaccinations
    from .exposure import compute_exposure

    dataset = _load_dataset(cfg)
    exposure = compute_exposure(dataset)
    samples = _read_samples(cfg, dataset)
    report = prevented_vaccinations(
        samples, dataset, exposure,
        total_population=cfg.effect.get("total_population"),
        period_days=cfg.effect.get("period_days"),
    )
    write_report(
        {"effect": to_jsonable(dataclasses.asdict(report)),
         "provenance": _provenance(cfg)},
        _out(cfg, "effect.json"),
    )
    draws = ate_draws(samples, dataset, exposure)
    plotting.effect_distribution(draws, report, _fig(cfg, "effect.png"))
    print(f"ATE {report.ate:.3e} (95% CI {report.ate_ci[0]:.3e}..{report.ate_ci[1]:.3e}), "
          f"prevented vaccinations {report.delta_v:.1f}")
    return 0


def cmd_counterfactual(cfg: RunConfig, args) -> int:
    from . import dynamics, plotting
    from .causal import counterfactual_delta_v
    from .exposure import compute_exposure
    from .inference import _align_exposure

    dataset = _load_dataset(cfg)
    exposure = compute_exposure(dataset)
    samples = _read_samples(cfg, dataset)
    report = counterfactual_delta_v(
        samples, dataset, exposure,
        max_draws=int(cfg.effect.get("max_draws", 500)),
    )
    write_report(
        {"effect": to_jsonable(dataclasses.asdict(report)),
         "provenance": _provenance(cfg)},
        _out(cfg, "counterfactual.json"),
    )

    # illustrate with the posterior-mean parameter point
    meta = samples.meta
    ds = dataset.restrict(meta["sampled_regions"])
    ds, E = _align_exposure(ds, exposure)
    params = samples.layout.unpack(samples.flat_z().mean(axis=0))
    init = dynamics.EpidemicState(
        S=ds.S[:, 0], I=ds.I[:, 0], R=ds.R[:, 0], V=ds.V[:, 0],
        alpha=np.broadcast_to(params.alpha0, (ds.n_regions,)).astype(float),
        N=ds.N,
    )
    kw = dict(
        horizon=ds.n_intervals,
        substeps=meta.get("substeps", ds.interval_days),
        interval_days=meta.get("interval_days", ds.interval_days),
        beta_period=meta.get("beta_period", 3),
        nu_period=meta.get("nu_period", 6),
        variant=meta.get("variant", "sirva"),
    )
    v_obs = dynamics.simulate(init, params, E, **kw).V.sum(axis=1)
    v_zero = dynamics.simulate(init, params, np.zeros_like(E), **kw).V.sum(axis=1)
    plotting.counterfactual_curves(
        np.arange(v_obs.shape[0]), v_obs, v_zero, _fig(cfg, "counterfactual.png")
    )
    print(f"counterfactual prevented vaccinations {report.delta_v:.1f} "
          f"(95% CI {report.delta_v_ci[0]:.1f}..{report.delta_v_ci[1]:.1f})")
    return 0


def cmd_risk(cfg: RunConfig, args) -> int:
    from . import plotting
    from .risk import (attribute_outcomes, national_risk_inputs,
                       unvaccinated_case_risk, unvaccinated_death_risk)

    eff = cfg.effect
    inputs = None
    p_case = eff.get("p_case")
    p_death = eff.get("p_death")
    if p_case is None or p_death is None:
        dataset = _load_dataset(cfg)
        inputs = national_risk_inputs(
            dataset,
            lambda_c=float(eff.get("lambda_case", 0.93)),
            lambda_d=float(eff.get("lambda_death", 0.94)),
        )
        if p_case is None:
            p_case = unvaccinated_case_risk(inputs)
        if p_death is None:
            p_death = unvaccinated_death_risk(inputs)
    delta_v = eff.get("delta_v")
    if delta_v is None:
        effect_path = _require(
            _out(cfg, "effect.json"),
            "run `hesitancy-lab ate` first or set effect.delta_v in the config",
        )
        delta_v = read_json(effect_path)["effect"]["delta_v"]
    report = attribute_outcomes(float(delta_v), float(p_case), float(p_death))
    payload = {
        "attribution": to_jsonable(dataclasses.asdict(report)),
        "provenance": _provenance(cfg),
    }
    if inputs is not None:
        payload["inputs"] = {
            "population": inputs.population,
            "cases_total": inputs.cases_total,
            "deaths_total": inputs.deaths_total,
            "lambda_case": inputs.lambda_c,
            "lambda_death": inputs.lambda_d,
            "intervals": int(len(inputs.delta_cases)),
        }
    write_report(payload, _out(cfg, "risk.json"))
    plotting.attribution_bars(report, _fig(cfg, "attribution.png"))
    if inputs is not None:
        plotting.risk_contributions(inputs, _fig(cfg, "risk_terms.png"))
    print(f"unvaccinated risk: cases {report.p_case_unvax:.4f}, deaths "
          f"{report.p_death_unvax:.5f}; attributable cases "
          f"{report.attributable_cases:.1f}, deaths {report.attributable_deaths:.2f}")
    return 0


def cmd_loo(cfg: RunConfig, args) -> int:
    from . import plotting
    from .exposure import compute_exposure
    from .model_selection import ElpdReport, compare_models, pointwise_loglik, psis_loo

    dataset = _load_dataset(cfg)
    exposure = compute_exposure(dataset)
    samples = _read_samples(cfg, dataset)
    label = samples.meta.get("variant", cfg.model_variant)
    loglik = pointwise_loglik(samples, dataset, exposure)
    report = psis_loo(loglik, label=label)
    payload = {
        "elpd_loo": report.elpd_loo,
        "se": report.se,
        "n_bad_k": report.n_bad_k,
        "n_draws": report.n_draws,
        "n_points": int(report.elpd_pointwise.shape[0]),
        "label": report.label,
        "pareto_k": to_jsonable(report.pareto_k),
        "elpd_pointwise": to_jsonable(report.elpd_pointwise),
        "provenance": _provenance(cfg),
    }
    write_report(payload, _out(cfg, "elpd.json"))
    write_report(payload, _out(cfg, f"elpd_{label}.json"))
    plotting.pareto_k_plot(report, _fig(cfg, "pareto_k.png"))

    stored = []
    for path in sorted(glob.glob(_out(cfg, "elpd_*.json"))):
        raw = read_json(path)
        stored.append(ElpdReport(
            elpd_loo=float(raw["elpd_loo"]),
            se=float(raw["se"]),
            elpd_pointwise=np.asarray(raw["elpd_pointwise"], dtype=float),
            pareto_k=np.asarray(raw["pareto_k"], dtype=float),
            n_bad_k=int(raw["n_bad_k"]),
            n_draws=int(raw["n_draws"]),
            label=raw.get("label", ""),
        ))
    labels = {r.label for r in stored}
    if len(labels) >= 2:
        comparison = compare_models(stored)
        comparison["provenance"] = _provenance(cfg)
        write_report(comparison, _out(cfg, "compare.json"))
        best = comparison["ranking"][0]
        print(f"elpd_loo[{label}] {report.elpd_loo:.1f} (se {report.se:.1f}); "
              f"best of {len(stored)} variants: {best['label']}")
    else:
        print(f"elpd_loo[{label}] {report.elpd_loo:.1f} (se {report.se:.1f}), "
              f"{report.n_bad_k} high Pareto-k points")
    return 0


def cmd_shuffle_test(cfg: RunConfig, args) -> int:
    from . import plotting
    from .causal import shuffle_null_test
    from .exposure import compute_exposure, shuffle_exposure
    from .inference import hdi, posterior_table, sample_posterior

    dataset = _load_dataset(cfg)
    shuffled = shuffle_exposure(compute_exposure(dataset), cfg.seed)
    sampler = dataclasses.replace(cfg.sampler, seed=cfg.seed).validate()
    samples = sample_posterior(
        dataset,
        sampler,
        exposure=shuffled,
        variant=cfg.model_variant,
        beta_period=cfg.beta_period_intervals,
        nu_period=cfg.nu_period_intervals,
        substeps=cfg.substeps,
        threads=args.threads,
    )
    draws = samples.param("gamma_e")
    lo, hi = hdi(draws)
    tail_p = shuffle_null_test(samples)
    diag = samples.diagnostics()
    write_report(posterior_table(samples), _out(cfg, "shuffle_posterior.csv"))
    write_report(
        {
            "p_gamma_e_leq_zero": tail_p,
            "gamma_e_mean": float(draws.mean()),
            "gamma_e_hdi": [float(lo), float(hi)],
            "hdi_covers_zero": bool(lo <= 0.0 <= hi),
            "diagnostics": {
                "max_r_hat": diag["max_r_hat"],
                "divergence_fraction": diag["divergence_fraction"],
            },
            "provenance": _provenance(cfg),
        },
        _out(cfg, "shuffle_test.json"),
    )
    plotting.null_effect_density(draws, _fig(cfg, "null_effect.png"))
    bad = diag["divergence_warning"] or diag["bad_r_hat"]
    if bad and not args.allow_bad_diagnostics:
        raise DiagnosticsError(
            f"sampler diagnostics failed on the shuffled fit (max R-hat "
            f"{diag['max_r_hat']:.3f}); artifacts were written"
        )
    print(f"shuffled-exposure gamma_e 95% HDI [{lo:.3f}, {hi:.3f}], "
          f"P(gamma_e<=0) {tail_p:.3f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "ate": cmd_ate,
    "counterfactual": cmd_counterfactual,
    "risk": cmd_risk,
    "loo": cmd_loo,
    "shuffle-test": cmd_shuffle_test,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _configure(args)
        return COMMANDS[args.command](cfg, args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DiagnosticsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
