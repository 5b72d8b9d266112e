"""Panel and network ingestion, cleaning, interval alignment, and report files.

Input schemas
-------------
``panel.csv``
    ``region_id,date,population,cum_cases,cum_deaths,cum_vaccinations,antivax_posts``
    ISO-8601 dates, one row per region-day (any uniform day spacing works).
``network.csv``
    ``exposed_region,source_region,retweet_count`` -- directed resharing
    counts; the exposed region is the one whose users reshared content
    originating in the source region.

Loading reindexes every region onto a shared daily grid, cleans the
cumulative series according to the configured policy, subsamples the grid to
interval boundaries (default every 8 days), and derives the recovered and
susceptible series plus the per-interval observation deltas used by the
likelihood. The recovered series uses the one-interval lag proxy
``R_t = C_{t-1}``; with no data before the first boundary this pins
``I_0 = 0`` for loaded panels.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InputError
from .seeding import rng_for

PANEL_COLUMNS = (
    "region_id",
    "date",
    "population",
    "cum_cases",
    "cum_deaths",
    "cum_vaccinations",
    "antivax_posts",
)
NETWORK_COLUMNS = ("exposed_region", "source_region", "retweet_count")
CLEANING_POLICIES = ("clip", "strict", "drop")
MODEL_VARIANTS = ("sirva", "sirv", "sirva_static", "sirva_wom")
# row order of the delta tensor and of the dispersion vector phi
DELTA_CHANNELS = ("C", "V", "R", "S")

FFILL_LIMIT_DAYS = 3


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for posterior sampling."""

    chains: int = 4
    warmup: int = 500
    draws: int = 500
    target_accept: float = 0.8
    max_depth: int = 10
    metric: str = "dense"  # dense handles correlated blocks; diag scales further
    seed: int = 0

    def validate(self) -> "SamplerConfig":
        if self.chains < 2:
            raise InputError("sampler.chains must be >= 2")
        if self.warmup < 0 or self.draws < 1:
            raise InputError("sampler.warmup must be >= 0 and sampler.draws >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise InputError("sampler.target_accept must lie in (0, 1)")
        if self.max_depth < 1:
            raise InputError("sampler.max_depth must be >= 1")
        if self.metric not in ("dense", "diag"):
            raise InputError("sampler.metric must be 'dense' or 'diag'")
        return self


@dataclass(frozen=True)
class RunConfig:
    """One run's full configuration (CLI and library entry points)."""

    panel: str | None = None
    network: str | None = None
    out_dir: str = "out"
    seed: int = 0
    interval_days: int = 8
    beta_period_intervals: int = 3
    nu_period_intervals: int = 6
    cleaning_policy: str = "clip"
    model_variant: str = "sirva"
    substeps: int | None = None  # Euler substeps per interval; None -> one per day
    subsample_regions: int | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    effect: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    _KNOWN_KEYS = (
        "paths",
        "seed",
        "interval_days",
        "beta_period_intervals",
        "nu_period_intervals",
        "cleaning_policy",
        "model_variant",
        "substeps",
        "subsample_regions",
        "sampler",
        "effect",
        "simulate",
        "synth",
    )

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "RunConfig":
        unknown = sorted(set(raw) - set(cls._KNOWN_KEYS))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        paths = dict(raw.get("paths", {}))
        unknown_paths = sorted(set(paths) - {"panel", "network", "out"})
        if unknown_paths:
            raise InputError(f"unknown config paths keys: {', '.join(unknown_paths)}")
        sampler = SamplerConfig(**raw.get("sampler", {})).validate()
        cfg = cls(
            panel=paths.get("panel"),
            network=paths.get("network"),
            out_dir=paths.get("out", "out"),
            seed=int(raw.get("seed", 0)),
            interval_days=int(raw.get("interval_days", 8)),
            beta_period_intervals=int(raw.get("beta_period_intervals", 3)),
            nu_period_intervals=int(raw.get("nu_period_intervals", 6)),
            cleaning_policy=raw.get("cleaning_policy", "clip"),
            model_variant=raw.get("model_variant", "sirva"),
            substeps=None if raw.get("substeps") is None else int(raw["substeps"]),
            subsample_regions=(
                None
                if raw.get("subsample_regions") is None
                else int(raw["subsample_regions"])
            ),
            sampler=sampler,
            effect=dict(raw.get("effect", {})),
            simulate=dict(raw.get("simulate", {})),
            synth=dict(raw.get("synth", {})),
        )
        return cfg.validate()

    def validate(self) -> "RunConfig":
        if self.interval_days < 1:
            raise InputError("interval_days must be >= 1")
        if self.beta_period_intervals < 1 or self.nu_period_intervals < 1:
            raise InputError("piecewise period lengths must be >= 1 interval")
        if self.cleaning_policy not in CLEANING_POLICIES:
            raise InputError(
                f"cleaning_policy must be one of {CLEANING_POLICIES}, "
                f"got {self.cleaning_policy!r}"
            )
        if self.model_variant not in MODEL_VARIANTS:
            raise InputError(
                f"model_variant must be one of {MODEL_VARIANTS}, "
                f"got {self.model_variant!r}"
            )
        if self.substeps is not None and self.substeps < 1:
            raise InputError("substeps must be >= 1")
        if self.subsample_regions is not None and self.subsample_regions < 1:
            raise InputError("subsample_regions must be >= 1")
        return self

    def effective_substeps(self) -> int:
        return self.interval_days if self.substeps is None else self.substeps


@dataclass(frozen=True)
class RegionPanel:
    """One region's daily series after reindexing onto the shared grid."""

    region_id: str
    population: float
    dates: tuple
    cum_cases: np.ndarray
    cum_deaths: np.ndarray
    cum_vaccinations: np.ndarray
    antivax_posts: np.ndarray


@dataclass(frozen=True)
class AlignedDataset:
    """Interval-aligned multi-region dataset.

    State matrices are (regions x boundaries); ``deltas`` is
    (4 x regions x intervals) ordered per ``DELTA_CHANNELS`` as
    (dC, dV, dR, -dS); ``posts`` holds mean daily antivax post counts per
    interval; ``W`` is the directed flow matrix with exposed regions as rows.
    """

    region_ids: tuple
    N: np.ndarray
    dates: tuple
    interval_days: int
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    V: np.ndarray
    C: np.ndarray
    D: np.ndarray
    deltas: np.ndarray
    posts: np.ndarray
    W: np.ndarray
    dropped: Mapping[str, str] = field(default_factory=dict)

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    @property
    def n_boundaries(self) -> int:
        return self.S.shape[1]

    @property
    def n_intervals(self) -> int:
        return self.deltas.shape[2]

    def region_index(self, region_id: str) -> int:
        try:
            return self.region_ids.index(region_id)
        except ValueError:
            raise KeyError(f"unknown region {region_id!r}") from None

    def restrict(self, region_ids: Sequence[str]) -> "AlignedDataset":
        """Dataset restricted to the given regions (original order kept)."""
        wanted = set(region_ids)
        missing = wanted - set(self.region_ids)
        if missing:
            raise KeyError(f"unknown regions: {sorted(missing)}")
        idx = [i for i, r in enumerate(self.region_ids) if r in wanted]
        ia = np.asarray(idx, dtype=int)
        return dataclasses.replace(
            self,
            region_ids=tuple(self.region_ids[i] for i in idx),
            N=self.N[ia],
            S=self.S[ia],
            I=self.I[ia],
            R=self.R[ia],
            V=self.V[ia],
            C=self.C[ia],
            D=self.D[ia],
            deltas=self.deltas[:, ia, :],
            posts=self.posts[ia],
            W=self.W[np.ix_(ia, ia)],
        )


def _parse_panel_rows(path: str):
    """Yield parsed panel rows; raises InputError with the offending line."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"panel file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PANEL_COLUMNS:
            raise InputError(
                f"{path}: expected header {','.join(PANEL_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            line = reader.line_num
            try:
                date = datetime.date.fromisoformat(row["date"])
                values = (
                    row["region_id"],
                    date,
                    float(row["population"]),
                    float(row["cum_cases"]),
                    float(row["cum_deaths"]),
                    float(row["cum_vaccinations"]),
                    float(row["antivax_posts"]),
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{line}: malformed row ({exc})") from None
            if not all(np.isfinite(v) for v in values[2:]):
                raise InputError(f"{path}:{line}: non-finite value")
            if min(values[3:]) < 0:
                raise InputError(f"{path}:{line}: negative count")
            yield line, values


def _reindex_region(region_id, rows, grid, policy):
    """Place one region's rows on the daily grid; returns RegionPanel or a
    drop reason string."""
    pos = {d: i for i, d in enumerate(grid)}
    G = len(grid)
    present = np.zeros(G, dtype=bool)
    data = np.zeros((4, G))
    pop = None
    for date, p, c, d, v, t in rows:
        i = pos[date]
        present[i] = True
        data[:, i] = (c, d, v, t)
        if pop is None:
            pop = p
        elif p != pop:
            return f"population varies within region ({pop} vs {p})"
    if pop is None or pop <= 0:
        return "population missing or not positive"
    if not present[0]:
        return "series starts after the panel grid begins"
    # forward fill short gaps: cumulatives carry forward, posts count as zero
    day_step = (grid[1] - grid[0]).days if G > 1 else 1
    run = 0
    for i in range(G):
        if present[i]:
            run = 0
            continue
        run += 1
        if run * day_step > FFILL_LIMIT_DAYS:
            return f"gap longer than {FFILL_LIMIT_DAYS} days"
        data[:3, i] = data[:3, i - 1]
        data[3, i] = 0.0
    cases, deaths, vax = data[0], data[1], data[2]
    for name, series in (("cum_cases", cases), ("cum_deaths", deaths),
                         ("cum_vaccinations", vax)):
        running = np.maximum.accumulate(series)
        if np.any(series < running):
            if policy == "strict":
                raise InputError(f"region {region_id}: non-monotone {name}")
            if policy == "drop":
                return f"non-monotone {name}"
            series[:] = running
    caps = (("cum_cases", cases, np.full(G, pop)), ("cum_deaths", deaths, cases))
    for name, series, cap in caps:
        if np.any(series > cap):
            if policy == "strict":
                raise InputError(f"region {region_id}: {name} exceeds its bound")
            if policy == "drop":
                return f"{name} exceeds its bound"
            np.minimum(series, cap, out=series)
    if np.any(cases + vax > pop):
        # susceptibles would go negative; no monotone clip can fix this
        if policy == "strict":
            raise InputError(
                f"region {region_id}: cases + vaccinations exceed population"
            )
        return "cases + vaccinations exceed population"
    return RegionPanel(region_id, pop, tuple(grid), cases, deaths, vax, data[3])


def _load_network(path: str, index: Mapping[str, int]):
    R = len(index)
    W = np.zeros((R, R))
    skipped = 0
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"network file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != NETWORK_COLUMNS:
            raise InputError(
                f"{path}: expected header {','.join(NETWORK_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            line = reader.line_num
            try:
                count = float(row["retweet_count"])
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{line}: malformed row ({exc})") from None
            if not np.isfinite(count) or count < 0:
                raise InputError(f"{path}:{line}: retweet_count must be >= 0")
            i = index.get(row["exposed_region"])
            j = index.get(row["source_region"])
            if i is None or j is None:
                skipped += 1
                continue
            W[i, j] += count
    return W, skipped


def load_dataset(panel_path: str, network_path: str, config: RunConfig) -> AlignedDataset:
    """Load, clean, and align the panel and network files.

    Regions that fail validation (short series, long gaps, inconsistent
    totals under a non-strict policy) are dropped and recorded in
    ``dataset.dropped``; network edges naming unknown or dropped regions are
    ignored. Boundary 0 sits on the first grid date.
    """
    by_region: dict[str, list] = {}
    seen: set[tuple[str, datetime.date]] = set()
    for line, (rid, date, *rest) in _parse_panel_rows(panel_path):
        if (rid, date) in seen:
            raise InputError(f"{panel_path}:{line}: duplicate row for {rid} {date}")
        seen.add((rid, date))
        by_region.setdefault(rid, []).append((date, *rest))
    if not by_region:
        raise InputError(f"{panel_path}: no data rows")

    all_dates = sorted({d for _, d in seen})
    if len(all_dates) < 2:
        raise InputError("panel needs at least two distinct dates")
    ordinals = np.array([d.toordinal() for d in all_dates])
    day_step = int(math.gcd(*np.diff(ordinals).tolist()))
    grid = [
        datetime.date.fromordinal(o)
        for o in range(ordinals[0], ordinals[-1] + 1, day_step)
    ]
    if config.interval_days % day_step:
        raise InputError(
            f"interval_days={config.interval_days} is not a multiple of the "
            f"panel's day spacing ({day_step})"
        )
    stride = config.interval_days // day_step
    n_boundaries = (len(grid) - 1) // stride + 1
    if n_boundaries < 2:
        raise InputError("panel too short for a single interval")

    panels, dropped = [], {}
    for rid in sorted(by_region):
        out = _reindex_region(rid, by_region[rid], grid, config.cleaning_policy)
        if isinstance(out, str):
            dropped[rid] = out
        else:
            panels.append(out)
    if not panels:
        raise InputError("all regions were dropped during cleaning")

    region_ids = tuple(p.region_id for p in panels)
    W, _ = _load_network(network_path, {r: i for i, r in enumerate(region_ids)})
    return _align(panels, W, grid, stride, n_boundaries, config.interval_days, dropped)


def _align(panels, W, grid, stride, T, interval_days, dropped) -> AlignedDataset:
    bidx = np.arange(T) * stride
    N = np.array([p.population for p in panels])
    C = np.stack([p.cum_cases[bidx] for p in panels])
    D = np.stack([p.cum_deaths[bidx] for p in panels])
    V = np.stack([p.cum_vaccinations[bidx] for p in panels])
    # lag proxy: recovered by boundary t are the cases known one interval earlier
    R = np.concatenate([C[:, :1], C[:, :-1]], axis=1)
    I = C - R
    S = N[:, None] - C - V
    daily = np.stack([p.antivax_posts for p in panels])
    posts = np.stack(
        [daily[:, k * stride:(k + 1) * stride].mean(axis=1) for k in range(T - 1)],
        axis=1,
    )
    deltas = np.stack(
        [np.diff(C, axis=1), np.diff(V, axis=1), np.diff(R, axis=1), -np.diff(S, axis=1)]
    )
    return AlignedDataset(
        region_ids=tuple(p.region_id for p in panels),
        N=N,
        dates=tuple(grid[i] for i in bidx),
        interval_days=interval_days,
        S=S, I=I, R=R, V=V, C=C, D=D,
        deltas=deltas,
        posts=posts,
        W=W,
        dropped=dict(dropped),
    )


def subsample_regions(dataset: AlignedDataset, count: int, seed: int) -> AlignedDataset:
    """Deterministically subsample ``count`` regions (order preserved)."""
    if count > dataset.n_regions:
        raise InputError(
            f"cannot subsample {count} of {dataset.n_regions} regions"
        )
    rng = rng_for(seed, "subsample")
    keep = np.sort(rng.choice(dataset.n_regions, size=count, replace=False))
    return dataset.restrict([dataset.region_ids[i] for i in keep])


def to_jsonable(obj):
    """Recursively convert reports (dataclasses, numpy values) to JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        # 0-d arrays collapse to a scalar under tolist()
        return to_jsonable(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, datetime.date):
        return obj.isoformat()
    return obj


def write_report(report, path: str) -> None:
    """Serialize a report to ``path``.

    ``.json`` paths accept mappings and dataclasses; ``.csv`` paths accept a
    ``(header, rows)`` pair. Output is deterministic (sorted JSON keys,
    ``repr`` floats in CSV cells).
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if path.endswith(".json"):
        payload = to_jsonable(report)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    elif path.endswith(".csv"):
        header, rows = report
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    else:
        raise InputError(f"unsupported report extension: {path}")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
