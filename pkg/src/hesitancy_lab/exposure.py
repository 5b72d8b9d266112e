"""Per-capita antivaccine exposure from post counts and the flow network.

For region i over interval t the exposure is

    E_{i,t} = (1/N_i) * sum_j(W_ij * T_{j,t}) / sum_j(W_ij)

where T_{j,t} is the mean daily post count of source region j during the
interval and W_ij the directed resharing weight. Units are posts per capita
per day, so the hesitancy conversion coefficient stays invariant under a
change of interval length. Rows with zero total out-weight are excluded: the
ratio is undefined there.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data_io import AlignedDataset
from .errors import InputError
from .seeding import rng_for


@dataclass(frozen=True)
class ExposureSeries:
    """Exposure matrix (regions x intervals) plus excluded-region report."""

    region_ids: tuple
    E: np.ndarray
    excluded: tuple = ()

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)


def compute_exposure(dataset: AlignedDataset) -> ExposureSeries:
    """Exposure for every region with positive network out-weight.

    Source regions always contribute their posts, including regions that are
    themselves excluded as exposed rows.
    """
    out_weight = dataset.W.sum(axis=1)
    keep = out_weight > 0
    weighted = dataset.W @ dataset.posts  # (R, intervals)
    E = weighted[keep] / out_weight[keep, None] / dataset.N[keep, None]
    if not np.all(np.isfinite(E)):
        raise InputError("non-finite exposure value")
    return ExposureSeries(
        region_ids=tuple(r for r, k in zip(dataset.region_ids, keep) if k),
        E=E,
        excluded=tuple(r for r, k in zip(dataset.region_ids, keep) if not k),
    )


def shuffle_exposure(exposure: ExposureSeries, seed: int) -> ExposureSeries:
    """Reassign whole exposure rows across regions by a random permutation.

    Deterministic in ``seed``; the multiset of rows is preserved, only the
    region labels change, which severs any real exposure-outcome link.
    """
    if exposure.n_regions < 2:
        raise InputError("shuffling needs at least two regions")
    perm = rng_for(seed, "shuffle").permutation(exposure.n_regions)
    return dataclasses.replace(exposure, E=exposure.E[perm])


def exposure_table(exposure: ExposureSeries):
    """(header, rows) form of the series for ``exposure.csv``."""
    header = ("region_id", "interval_index", "exposure_per_capita_per_day")
    rows = [
        (rid, t, exposure.E[i, t])
        for i, rid in enumerate(exposure.region_ids)
        for t in range(exposure.E.shape[1])
    ]
    return header, rows
