"""Unvaccinated infection/death risk and outcome attribution.

The probability that an unvaccinated person was infected over the window is

    P(C|unvax) = sum_t [dC_t / (N - C)] /
                 [ (V_t/(N - C)) * (1 - lambda_C) + (N - C - V_t)/(N - C) ]

where the bracket reweights each interval's incidence toward the
unvaccinated once the vaccinated share (effectiveness lambda_C) is
discounted. ``C`` is the window-end cumulative total; the death risk mirrors
the formula with the death series and lambda_D. Attribution multiplies
per-person risks by a prevented-vaccination count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import AlignedDataset
from .errors import InputError


@dataclass(frozen=True)
class RiskInputs:
    """National aggregate series plus effectiveness parameters.

    ``delta_cases``/``delta_deaths`` are per-interval increments aligned with
    ``vaccinated`` (cumulative vaccinations paired with each interval);
    ``cases_total``/``deaths_total`` are the window totals used in the
    denominators.
    """

    delta_cases: np.ndarray
    delta_deaths: np.ndarray
    vaccinated: np.ndarray
    population: float
    cases_total: float
    deaths_total: float
    lambda_c: float = 0.93
    lambda_d: float = 0.94

    def validate(self) -> "RiskInputs":
        if not 0.0 <= self.lambda_c <= 1.0 or not 0.0 <= self.lambda_d <= 1.0:
            raise InputError("effectiveness values must lie in [0, 1]")
        n = len(self.delta_cases)
        if len(self.delta_deaths) != n or len(self.vaccinated) != n:
            raise InputError("risk series must share one length")
        if np.any(np.asarray(self.vaccinated) > self.population):
            raise InputError("vaccinated exceeds population")
        return self


@dataclass(frozen=True)
class AttributionReport:
    p_case_unvax: float
    p_death_unvax: float
    attributable_cases: float
    attributable_deaths: float
    delta_v: float
    notes: dict = field(default_factory=dict)


def national_risk_inputs(
    dataset: AlignedDataset, lambda_c: float = 0.93, lambda_d: float = 0.94
) -> RiskInputs:
    """Aggregate a multi-region dataset into national risk inputs.

    Each interval's increment is paired with the vaccination total at the
    interval's end boundary.
    """
    C = dataset.C.sum(axis=0)
    D = dataset.D.sum(axis=0)
    V = dataset.V.sum(axis=0)
    return RiskInputs(
        delta_cases=np.diff(C),
        delta_deaths=np.diff(D),
        vaccinated=V[1:],
        population=float(dataset.N.sum()),
        cases_total=float(C[-1]),
        deaths_total=float(D[-1]),
        lambda_c=lambda_c,
        lambda_d=lambda_d,
    ).validate()


def _unvaccinated_risk(deltas, vaccinated, population, total, lam) -> float:
    pool = population - total
    if pool <= 0:
        raise InputError("window total leaves no at-risk population")
    deltas = np.asarray(deltas, float)
    vaccinated = np.asarray(vaccinated, float)
    bracket = (vaccinated / pool) * (1.0 - lam) + (pool - vaccinated) / pool
    if np.any(bracket <= 0):
        raise InputError(
            "degenerate coverage: effectiveness 1 with everyone vaccinated"
        )
    p = float(np.sum(deltas / pool / bracket))
    if not 0.0 <= p <= 1.0:
        raise InputError(f"risk {p} outside [0, 1]; inputs are inconsistent")
    return p


def unvaccinated_case_risk(inputs: RiskInputs) -> float:
    """Window probability that an unvaccinated person becomes a case."""
    inputs.validate()
    return _unvaccinated_risk(
        inputs.delta_cases, inputs.vaccinated, inputs.population,
        inputs.cases_total, inputs.lambda_c,
    )


def unvaccinated_death_risk(inputs: RiskInputs) -> float:
    """Window probability that an unvaccinated person dies of infection."""
    inputs.validate()
    return _unvaccinated_risk(
        inputs.delta_deaths, inputs.vaccinated, inputs.population,
        inputs.deaths_total, inputs.lambda_d,
    )


def attribute_outcomes(delta_v: float, p_case: float, p_death: float) -> AttributionReport:
    """Cases/deaths attributable to ``delta_v`` prevented vaccinations."""
    for name, v in (("delta_v", delta_v), ("p_case", p_case), ("p_death", p_death)):
        if not np.isfinite(v) or v < 0:
            raise InputError(f"{name} must be finite and non-negative")
    return AttributionReport(
        p_case_unvax=float(p_case),
        p_death_unvax=float(p_death),
        attributable_cases=float(delta_v * p_case),
        attributable_deaths=float(delta_v * p_death),
        delta_v=float(delta_v),
    )
