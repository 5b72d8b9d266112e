"""SIRVA dynamics: Euler integration, variants, and synthetic data.

The model splits susceptibles into a vaccine-accepting share ``(1-alpha)*S``
and a hesitant share ``alpha*S`` and evolves, per day,

    dS = -beta*(I/N)*S - nu*S*(1-alpha)
    dI =  beta*(I/N)*S - rho*I
    dR =  rho*I
    dV =  nu*S*(1-alpha)
    dalpha = gamma*(1-alpha),   gamma = gamma_p + gamma_e*E_t [+ gamma_a*alpha]

Variants: ``sirv`` pins alpha to 0, ``sirva_static`` freezes alpha at its
initial value, ``sirva_wom`` adds the word-of-mouth feedback ``gamma_a*alpha``.
``beta`` and ``nu`` are piecewise constant over fixed blocks of intervals.

All state fields may be scalars or aligned arrays (for region-vectorized or
posterior-draw-vectorized use); updates broadcast. Outflows are clamped to
the available compartment mass within each substep, so the population total
is conserved exactly up to float rounding.
"""
from __future__ import annotations

import dataclasses
import datetime
from dataclasses import dataclass

import numpy as np

from .data_io import AlignedDataset
from .errors import InputError
from .seeding import rng_for

VARIANTS = ("sirva", "sirv", "sirva_static", "sirva_wom")


@dataclass(frozen=True)
class EpidemicState:
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    V: np.ndarray
    alpha: np.ndarray
    N: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """One full parameter point.

    ``beta`` and ``nu`` carry one value per piecewise period; ``alpha0`` one
    value per region (scalars broadcast); ``phi`` holds the four channel
    dispersions in (C, V, R, S) order.
    """

    beta: np.ndarray
    rho: float
    nu: np.ndarray
    gamma_e: float = 0.0
    gamma_p: float = 0.0
    gamma_a: float = 0.0
    alpha0: np.ndarray = 0.0
    phi: np.ndarray = (10.0, 10.0, 10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))
        object.__setattr__(self, "nu", np.atleast_1d(np.asarray(self.nu, float)))
        object.__setattr__(self, "alpha0", np.asarray(self.alpha0, float))
        object.__setattr__(self, "phi", np.asarray(self.phi, float))

    def validate(self) -> "ModelParams":
        if np.any(self.beta <= 0) or self.rho <= 0 or np.any(self.nu <= 0):
            raise InputError("beta, rho, and nu must be positive")
        if self.phi.shape != (4,) or np.any(self.phi <= 0):
            raise InputError("phi must hold four positive dispersions")
        if np.any(self.alpha0 < 0) or np.any(self.alpha0 > 1):
            raise InputError("alpha0 must lie in [0, 1]")
        return self


@dataclass(frozen=True)
class Trajectory:
    """States at interval boundaries plus per-interval observation deltas."""

    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    V: np.ndarray
    alpha: np.ndarray
    N: np.ndarray
    deltas: np.ndarray  # (4, horizon, ...) as (dC, dV, dR, -dS)

    @property
    def horizon(self) -> int:
        return self.S.shape[0] - 1

    def boundary(self, k: int) -> EpidemicState:
        return EpidemicState(
            self.S[k], self.I[k], self.R[k], self.V[k], self.alpha[k], self.N
        )


def _alpha_update(alpha, gamma_e, gamma_p, gamma_a, E_t, dt):
    gamma = gamma_p + gamma_e * E_t
    if np.any(gamma_a != 0):
        gamma = gamma + gamma_a * alpha
    return np.clip(alpha + dt * gamma * (1.0 - alpha), 0.0, 1.0)


def step(
    state: EpidemicState,
    params: ModelParams,
    E_t,
    dt_days: float,
    variant: str = "sirva",
    beta_index: int = 0,
    nu_index: int = 0,
) -> EpidemicState:
    """One Euler substep of length ``dt_days``.

    Outflows from S (infection + vaccination) are jointly rescaled and the
    recovery flow capped so no compartment goes negative.
    """
    if dt_days <= 0:
        raise InputError("dt_days must be positive")
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}")
    S, I, R, V, alpha, N = (
        np.asarray(state.S, float),
        np.asarray(state.I, float),
        np.asarray(state.R, float),
        np.asarray(state.V, float),
        np.asarray(state.alpha, float),
        np.asarray(state.N, float),
    )
    if variant == "sirv":
        alpha = np.zeros(np.shape(alpha))
    beta = params.beta[beta_index]
    nu = params.nu[nu_index]
    infections = beta * (I / N) * S * dt_days
    vaccinations = nu * S * (1.0 - alpha) * dt_days
    out = infections + vaccinations
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(out > S, S / np.maximum(out, 1e-12), 1.0)
    infections = infections * scale
    vaccinations = vaccinations * scale
    recoveries = np.minimum(params.rho * I * dt_days, I)
    if variant in ("sirva", "sirva_wom"):
        gamma_a = params.gamma_a if variant == "sirva_wom" else 0.0
        new_alpha = _alpha_update(
            alpha, params.gamma_e, params.gamma_p, gamma_a, E_t, dt_days
        )
    else:
        new_alpha = alpha
    return EpidemicState(
        S=S - infections - vaccinations,
        I=I + infections - recoveries,
        R=R + recoveries,
        V=V + vaccinations,
        alpha=new_alpha,
        N=N,
    )


def _period_index(k: int, period: int, n_values: int) -> int:
    idx = k // period
    if idx >= n_values:
        raise InputError(
            f"interval {k} needs piecewise value {idx} but only "
            f"{n_values} are provided"
        )
    return idx


def simulate(
    initial: EpidemicState,
    params: ModelParams,
    exposure,
    horizon: int,
    substeps: int | None = None,
    interval_days: int = 8,
    beta_period: int = 3,
    nu_period: int = 6,
    variant: str = "sirva",
) -> Trajectory:
    """Integrate ``horizon`` intervals with ``substeps`` Euler substeps each.

    ``exposure`` supplies E values per interval along its last axis and must
    cover the horizon. Defaults to one substep per day.
    """
    if substeps is None:
        substeps = interval_days
    if substeps < 1:
        raise InputError("substeps must be >= 1")
    E = np.asarray(exposure, float)
    if E.ndim == 0:
        E = np.broadcast_to(E, (max(horizon, 1),))
    if horizon > 0 and E.shape[-1] < horizon:
        raise InputError(f"exposure covers {E.shape[-1]} < horizon {horizon} intervals")
    dt = interval_days / substeps
    shape = np.broadcast_shapes(
        np.shape(initial.S), np.shape(initial.I), np.shape(initial.R),
        np.shape(initial.V), np.shape(initial.alpha),
    )
    out = {f: np.empty((horizon + 1,) + shape) for f in "SIRVa"}
    deltas = np.empty((4, horizon) + shape)
    state = EpidemicState(
        *(np.broadcast_to(np.asarray(getattr(initial, f), float), shape).copy()
          for f in ("S", "I", "R", "V", "alpha")),
        N=np.asarray(initial.N, float),
    )
    if variant == "sirv":
        state = dataclasses.replace(state, alpha=np.zeros(shape))
    for f, k in zip("SIRVa", ("S", "I", "R", "V", "alpha")):
        out[f][0] = getattr(state, k)
    for k in range(horizon):
        bi = _period_index(k, beta_period, len(params.beta))
        ni = _period_index(k, nu_period, len(params.nu))
        prev = state
        for _ in range(substeps):
            state = step(state, params, E[..., k], dt, variant, bi, ni)
        deltas[0, k] = (state.I + state.R) - (prev.I + prev.R)
        deltas[1, k] = state.V - prev.V
        deltas[2, k] = state.R - prev.R
        deltas[3, k] = prev.S - state.S
        for f, name in zip("SIRVa", ("S", "I", "R", "V", "alpha")):
            out[f][k + 1] = getattr(state, name)
    return Trajectory(
        S=out["S"], I=out["I"], R=out["R"], V=out["V"], alpha=out["a"],
        N=np.asarray(initial.N, float), deltas=deltas,
    )


def alpha_grid(
    gamma_e,
    gamma_p,
    gamma_a,
    alpha0,
    exposure: np.ndarray,
    interval_days: int,
    substeps: int,
    variant: str = "sirva",
) -> np.ndarray:
    """Hesitancy ratio at every interval boundary, free-run from alpha0.

    ``exposure`` is (regions x intervals); parameter arguments broadcast, so
    stacking posterior draws along leading axes (e.g. ``gamma_e[:, None]``
    against ``alpha0[None, :]``) yields per-draw grids. Returns an array with
    trailing shape (..., regions, intervals + 1).
    """
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}")
    E = np.asarray(exposure, float)
    n_int = E.shape[-1]
    a0 = np.asarray(alpha0, float)
    base = np.broadcast_shapes(
        np.shape(gamma_e), np.shape(gamma_p), np.shape(gamma_a), a0.shape,
        E.shape[:-1],
    )
    if variant == "sirv":
        return np.zeros(base + (n_int + 1,))
    if variant == "sirva_static":
        return np.broadcast_to(a0[..., None], base + (n_int + 1,)).copy()
    dt = interval_days / substeps
    grid = np.empty(base + (n_int + 1,))
    a = np.broadcast_to(a0, base).astype(float).copy()
    grid[..., 0] = a
    ga = gamma_a if variant == "sirva_wom" else 0.0
    for k in range(n_int):
        for _ in range(substeps):
            a = _alpha_update(a, gamma_e, gamma_p, ga, E[..., k], dt)
        grid[..., k + 1] = a
    return grid


def generate_synthetic(
    params: ModelParams,
    initial: EpidemicState,
    exposure: np.ndarray,
    intervals: int,
    seed: int,
    interval_days: int = 8,
    substeps: int | None = None,
    beta_period: int = 3,
    nu_period: int = 6,
    variant: str = "sirva",
    region_ids=None,
    start_date: datetime.date = datetime.date(2021, 2, 6),
) -> AlignedDataset:
    """Generate an observation-noise dataset the one-step-ahead model expects.

    Each interval starts from the current *observed* state, the model deltas
    become negative-binomial means, and one draw per channel is taken
    (deterministic in ``seed`` via the ``synth`` stream). Cumulative series
    are rebuilt from the drawn C/V/R increments; the susceptible-outflow
    channel is an independent draw recorded alongside, mirroring the
    likelihood's four independent channels. The returned dataset carries an
    identity flow network and per-day post counts chosen so that recomputing
    exposure reproduces ``exposure`` exactly.
    """
    params.validate()
    if substeps is None:
        substeps = interval_days
    rng = rng_for(seed, "synth")
    E = np.asarray(exposure, float)
    R_n = E.shape[0]
    if region_ids is None:
        region_ids = tuple(f"r{i:03d}" for i in range(R_n))
    N = np.broadcast_to(np.asarray(initial.N, float), (R_n,)).astype(float)
    alpha = alpha_grid(
        params.gamma_e, params.gamma_p, params.gamma_a,
        np.broadcast_to(params.alpha0, (R_n,)),
        E, interval_days, substeps, variant,
    )
    phi = params.phi
    C = np.empty((R_n, intervals + 1))
    D = np.zeros((R_n, intervals + 1))
    V = np.empty((R_n, intervals + 1))
    Rr = np.empty((R_n, intervals + 1))
    S = np.empty((R_n, intervals + 1))
    I = np.empty((R_n, intervals + 1))
    S[:, 0] = np.broadcast_to(initial.S, (R_n,))
    I[:, 0] = np.broadcast_to(initial.I, (R_n,))
    Rr[:, 0] = np.broadcast_to(initial.R, (R_n,))
    V[:, 0] = np.broadcast_to(initial.V, (R_n,))
    C[:, 0] = I[:, 0] + Rr[:, 0]
    deltas = np.empty((4, R_n, intervals))
    for k in range(intervals):
        bi = _period_index(k, beta_period, len(params.beta))
        ni = _period_index(k, nu_period, len(params.nu))
        state = EpidemicState(S[:, k], I[:, k], Rr[:, k], V[:, k], alpha[:, k], N)
        dt = interval_days / substeps
        for _ in range(substeps):
            state = step(state, params, E[:, k], dt, variant, bi, ni)
        mu = np.stack([
            (state.I + state.R) - C[:, k],
            state.V - V[:, k],
            state.R - Rr[:, k],
            S[:, k] - state.S,
        ])
        mu = np.maximum(mu, 1e-6)
        x = rng.poisson(rng.gamma(shape=phi[:, None], scale=mu / phi[:, None]))
        deltas[:, :, k] = x
        C[:, k + 1] = np.minimum(C[:, k] + x[0], N)
        V[:, k + 1] = np.minimum(V[:, k] + x[1], N - C[:, k + 1])
        Rr[:, k + 1] = np.minimum(Rr[:, k] + x[2], C[:, k + 1])
        deltas[0, :, k] = C[:, k + 1] - C[:, k]
        deltas[1, :, k] = V[:, k + 1] - V[:, k]
        deltas[2, :, k] = Rr[:, k + 1] - Rr[:, k]
        S[:, k + 1] = N - C[:, k + 1] - V[:, k + 1]
        I[:, k + 1] = C[:, k + 1] - Rr[:, k + 1]
    dates = tuple(
        start_date + datetime.timedelta(days=interval_days * k)
        for k in range(intervals + 1)
    )
    return AlignedDataset(
        region_ids=tuple(region_ids),
        N=N,
        dates=dates,
        interval_days=interval_days,
        S=S, I=I, R=Rr, V=V, C=C, D=D,
        deltas=deltas,
        posts=E * N[:, None],
        W=np.eye(R_n),
        dropped={},
    )


def trajectory_table(traj: Trajectory, region_ids):
    """(header, rows) form of a region-vectorized trajectory."""
    header = ("region_id", "interval_index", "S", "I", "R", "V", "alpha")
    S = np.atleast_2d(traj.S.T)
    I = np.atleast_2d(traj.I.T)
    R = np.atleast_2d(traj.R.T)
    V = np.atleast_2d(traj.V.T)
    a = np.atleast_2d(traj.alpha.T)
    rows = [
        (rid, k, S[i, k], I[i, k], R[i, k], V[i, k], a[i, k])
        for i, rid in enumerate(region_ids)
        for k in range(S.shape[1])
    ]
    return header, rows
