"""Euler dynamics: hand-traced steps, conservation, closed forms, variants."""
import dataclasses

import numpy as np
import pytest

from hesitancy_lab.dynamics import (
    EpidemicState,
    ModelParams,
    alpha_grid,
    generate_synthetic,
    simulate,
    step,
    trajectory_table,
)
from hesitancy_lab.errors import InputError
from hesitancy_lab.exposure import compute_exposure


def state(S=900.0, I=50.0, R=30.0, V=20.0, alpha=0.3, N=1000.0):
    return EpidemicState(S=S, I=I, R=R, V=V, alpha=alpha, N=N)


class TestStep:
    def test_hand_traced_substep(self):
        p = ModelParams(beta=0.4, rho=0.2, nu=0.01, gamma_e=2.0, gamma_p=0.01)
        nxt = step(state(), p, E_t=0.05, dt_days=0.5)
        # infections 0.4*(50/1000)*900*0.5 = 9, vaccinations 0.01*900*0.7*0.5 = 3.15
        assert np.isclose(nxt.S, 900 - 9 - 3.15)
        assert np.isclose(nxt.I, 50 + 9 - 5.0)
        assert np.isclose(nxt.R, 35.0)
        assert np.isclose(nxt.V, 23.15)
        # gamma = 0.01 + 2*0.05; alpha += dt*gamma*(1-alpha)
        assert np.isclose(nxt.alpha, 0.3 + 0.5 * 0.11 * 0.7)

    def test_outflow_clamp_empties_susceptibles(self):
        p = ModelParams(beta=50.0, rho=0.1, nu=5.0)
        nxt = step(state(S=10.0), p, E_t=0.0, dt_days=1.0)
        assert nxt.S >= 0
        assert np.isclose(nxt.S + nxt.I + nxt.R + nxt.V, 10 + 50 + 30 + 20)
        # infection/vaccination split of the emptied pool keeps its ratio
        inf, vac = nxt.I + nxt.R - 80, nxt.V - 20
        assert np.isclose(inf / vac, (50.0 * 50 / 1000) / (5.0 * 0.7))

    def test_recovery_capped_at_infected(self):
        p = ModelParams(beta=0.0001, rho=30.0, nu=0.0001)
        nxt = step(state(), p, E_t=0.0, dt_days=1.0)
        assert nxt.R == pytest.approx(30 + 50)

    def test_alpha_clipped_to_unit_interval(self):
        p = ModelParams(beta=0.1, rho=0.1, nu=0.01, gamma_p=100.0)
        nxt = step(state(), p, E_t=0.0, dt_days=1.0)
        assert nxt.alpha == 1.0
        again = step(nxt, p, E_t=0.0, dt_days=1.0)
        assert again.alpha == 1.0

    def test_sirv_ignores_alpha(self):
        p = ModelParams(beta=0.4, rho=0.2, nu=0.01, gamma_e=5.0, gamma_p=1.0)
        nxt = step(state(alpha=0.9), p, E_t=1.0, dt_days=1.0, variant="sirv")
        ref = step(state(alpha=0.0), ModelParams(beta=0.4, rho=0.2, nu=0.01),
                   E_t=0.0, dt_days=1.0)
        assert np.isclose(nxt.V, ref.V)
        assert np.all(nxt.alpha == 0.0)

    def test_bad_inputs(self):
        p = ModelParams(beta=0.4, rho=0.2, nu=0.01)
        with pytest.raises(InputError, match="dt_days"):
            step(state(), p, 0.0, dt_days=0.0)
        with pytest.raises(InputError, match="variant"):
            step(state(), p, 0.0, dt_days=1.0, variant="seirs")


class TestParamsValidation:
    @pytest.mark.parametrize("kw", [
        {"beta": 0.0}, {"rho": -1.0}, {"nu": 0.0},
        {"phi": (1.0, 1.0, 1.0)}, {"phi": (1.0, 1.0, 1.0, -2.0)},
        {"alpha0": 1.5},
    ])
    def test_rejects(self, kw):
        base = dict(beta=0.2, rho=0.1, nu=0.01, alpha0=0.2,
                    phi=(10.0, 10.0, 10.0, 10.0))
        base.update(kw)
        with pytest.raises(InputError):
            ModelParams(**base).validate()


class TestConservation:
    def test_thousand_steps_hundred_draws(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            p = ModelParams(
                beta=rng.uniform(0.01, 3.0), rho=rng.uniform(0.01, 1.0),
                nu=rng.uniform(1e-4, 0.2), gamma_e=rng.uniform(0, 2),
                gamma_p=rng.uniform(0, 0.05), alpha0=rng.uniform(0, 1),
            )
            N = rng.uniform(1e3, 1e6)
            I0 = rng.uniform(0, 0.05) * N
            V0 = rng.uniform(0, 0.2) * N
            init = EpidemicState(S=N - I0 - V0, I=I0, R=0.0, V=V0,
                                 alpha=float(p.alpha0), N=N)
            traj = simulate(init, p, exposure=rng.uniform(0, 0.2),
                            horizon=100, substeps=10, interval_days=1,
                            beta_period=1000, nu_period=1000)
            total = traj.S + traj.I + traj.R + traj.V
            worst = max(worst, np.max(np.abs(total - N)) / N)
        assert worst <= 1e-6

    def test_conserved_even_when_clamped(self):
        p = ModelParams(beta=80.0, rho=40.0, nu=10.0, gamma_p=5.0)
        init = state()
        traj = simulate(init, p, exposure=0.5, horizon=50, substeps=1,
                        interval_days=1, beta_period=100, nu_period=100)
        total = traj.S + traj.I + traj.R + traj.V
        np.testing.assert_allclose(total, 1000.0, rtol=1e-12)
        assert np.all(traj.S >= 0) and np.all(traj.I >= -1e-9)


class TestClosedForm:
    def test_beta_zero_alpha_zero_exact_exponential(self):
        # no infections, no hesitancy: V - V0 = S0*(1 - exp(-nu*t))
        nu, days = 0.0025, 160
        p = ModelParams(beta=0.2, rho=0.1, nu=nu)
        init = EpidemicState(S=9e4, I=0.0, R=0.0, V=1e3, alpha=0.0, N=1e5)
        traj = simulate(init, p, exposure=0.0, horizon=days // 8, substeps=8,
                        interval_days=8, beta_period=99, nu_period=99)
        t = 8.0 * np.arange(days // 8 + 1)
        exact = 1e3 + 9e4 * (1 - np.exp(-nu * t))
        np.testing.assert_allclose(traj.V, exact, rtol=2e-3)

    def test_hesitant_share_formula_small_horizon(self):
        # frozen alpha0: N_S*(1-alpha0)*(1-exp(-nu t)) holds to 1% while
        # nu*t stays small; checked at 8 substeps/interval
        nu, alpha0 = 0.0025, 0.2
        p = ModelParams(beta=0.2, rho=0.1, nu=nu, alpha0=alpha0)
        init = EpidemicState(S=9e4, I=0.0, R=0.0, V=0.0, alpha=alpha0, N=1e5)
        traj = simulate(init, p, exposure=0.0, horizon=4, substeps=8,
                        interval_days=8, variant="sirva_static",
                        beta_period=99, nu_period=99)
        t = 8.0 * np.arange(1, 5)
        formula = 9e4 * (1 - alpha0) * (1 - np.exp(-nu * t))
        assert np.max(np.abs(traj.V[1:] - formula) / formula) < 0.01

    def test_euler_error_shrinks_first_order(self):
        p = ModelParams(beta=0.3, rho=0.15, nu=0.005, gamma_e=1.0,
                        gamma_p=0.01, alpha0=0.3)
        init = state(alpha=0.3)
        runs = {}
        for sub in (2, 4, 64):
            traj = simulate(init, p, exposure=0.05, horizon=6, substeps=sub,
                            interval_days=8, beta_period=99, nu_period=99)
            runs[sub] = traj.V[-1]
        err2 = abs(runs[2] - runs[64])
        err4 = abs(runs[4] - runs[64])
        assert 1.6 < err2 / err4 < 2.5


class TestVariants:
    P = ModelParams(beta=0.3, rho=0.12, nu=0.004, gamma_e=0.8, gamma_p=0.01,
                    gamma_a=0.4, alpha0=0.25)

    def run(self, variant, **over):
        p = dataclasses.replace(self.P, **over)
        init = state(alpha=0.25)
        return simulate(init, p, exposure=0.06, horizon=5, substeps=4,
                        interval_days=8, variant=variant,
                        beta_period=99, nu_period=99)

    def test_static_keeps_alpha(self):
        traj = self.run("sirva_static")
        np.testing.assert_array_equal(traj.alpha, 0.25)

    def test_sirv_is_alpha_zero_sirva(self):
        sirv = self.run("sirv")
        degenerate = dataclasses.replace(self.P, gamma_e=0.0, gamma_p=0.0,
                                         gamma_a=0.0)
        ref = simulate(state(alpha=0.0), degenerate, exposure=0.06, horizon=5,
                       substeps=4, interval_days=8, beta_period=99,
                       nu_period=99)
        np.testing.assert_allclose(sirv.V, ref.V)
        np.testing.assert_array_equal(sirv.alpha, 0.0)

    def test_wom_reduces_to_sirva_when_gamma_a_zero(self):
        np.testing.assert_array_equal(
            self.run("sirva_wom", gamma_a=0.0).alpha, self.run("sirva").alpha
        )

    def test_wom_feedback_accelerates_hesitancy(self):
        assert np.all(
            self.run("sirva_wom").alpha[1:] > self.run("sirva").alpha[1:]
        )

    @pytest.mark.parametrize("variant", ["sirva", "sirv", "sirva_static",
                                         "sirva_wom"])
    def test_alpha_grid_matches_simulate(self, variant):
        traj = self.run(variant)
        E = np.full((1, 5), 0.06)
        grid = alpha_grid(self.P.gamma_e, self.P.gamma_p, self.P.gamma_a,
                          np.array([0.25]), E, interval_days=8, substeps=4,
                          variant=variant)
        np.testing.assert_allclose(grid[0], traj.alpha, atol=1e-12)

    def test_alpha_grid_broadcasts_draws(self):
        rng = np.random.default_rng(5)
        E = rng.uniform(0, 0.1, (3, 4))
        ge = rng.uniform(0, 1, (8, 1))
        a0 = rng.uniform(0, 0.5, 3)
        grid = alpha_grid(ge, 0.01, 0.0, a0, E, interval_days=8, substeps=2)
        assert grid.shape == (8, 3, 5)
        single = alpha_grid(float(ge[5, 0]), 0.01, 0.0, a0, E,
                            interval_days=8, substeps=2)
        np.testing.assert_allclose(grid[5], single)


class TestSimulateShape:
    def test_piecewise_switch_and_exhaustion(self):
        p = ModelParams(beta=[0.3, 0.0001], rho=0.1, nu=[0.001, 0.05],
                        alpha0=0.0)
        init = state(alpha=0.0)
        traj = simulate(init, p, exposure=0.0, horizon=4, substeps=2,
                        interval_days=8, beta_period=2, nu_period=2)
        first = simulate(init, ModelParams(beta=0.3, rho=0.1, nu=0.001),
                         exposure=0.0, horizon=2, substeps=2, interval_days=8,
                         beta_period=99, nu_period=99)
        np.testing.assert_allclose(traj.S[:3], first.S)
        # second block switches rates
        resumed = simulate(traj.boundary(2), ModelParams(beta=0.0001, rho=0.1,
                           nu=0.05), exposure=0.0, horizon=2, substeps=2,
                           interval_days=8, beta_period=99, nu_period=99)
        np.testing.assert_allclose(traj.S[2:], resumed.S)
        with pytest.raises(InputError, match="piecewise value"):
            simulate(init, p, exposure=0.0, horizon=5, substeps=2,
                     interval_days=8, beta_period=2, nu_period=2)

    def test_exposure_must_cover_horizon(self):
        p = ModelParams(beta=0.3, rho=0.1, nu=0.001)
        with pytest.raises(InputError, match="covers"):
            simulate(state(), p, exposure=np.zeros(3), horizon=4, substeps=1,
                     interval_days=8, beta_period=99, nu_period=99)

    def test_substeps_validation(self):
        p = ModelParams(beta=0.3, rho=0.1, nu=0.001)
        with pytest.raises(InputError, match="substeps"):
            simulate(state(), p, exposure=0.0, horizon=2, substeps=0)

    def test_vectorized_over_regions(self):
        p = ModelParams(beta=0.3, rho=0.1, nu=0.002, gamma_p=0.01, alpha0=0.2)
        init = EpidemicState(S=np.array([900.0, 800.0]), I=np.array([50.0, 100.0]),
                             R=np.zeros(2), V=np.array([50.0, 100.0]),
                             alpha=np.full(2, 0.2), N=np.array([1000.0, 1000.0]))
        traj = simulate(init, p, exposure=np.zeros((2, 3)), horizon=3,
                        substeps=2, interval_days=8, beta_period=99, nu_period=99)
        assert traj.S.shape == (4, 2)
        solo = simulate(EpidemicState(800.0, 100.0, 0.0, 100.0, 0.2, 1000.0),
                        p, exposure=np.zeros(3), horizon=3, substeps=2,
                        interval_days=8, beta_period=99, nu_period=99)
        np.testing.assert_allclose(traj.V[:, 1], solo.V)

    def test_deltas_consistent_with_states(self):
        p = ModelParams(beta=0.3, rho=0.1, nu=0.002, gamma_p=0.01, alpha0=0.2)
        traj = simulate(state(alpha=0.2), p, exposure=0.03, horizon=5,
                        substeps=4, interval_days=8, beta_period=99,
                        nu_period=99)
        np.testing.assert_allclose(
            traj.deltas[0], np.diff(traj.I + traj.R, axis=0))
        np.testing.assert_allclose(traj.deltas[1], np.diff(traj.V, axis=0))
        np.testing.assert_allclose(traj.deltas[2], np.diff(traj.R, axis=0))
        np.testing.assert_allclose(traj.deltas[3], -np.diff(traj.S, axis=0))


class TestGenerateSynthetic:
    def make(self, seed=3, R=6, K=5, phi=8.0):
        rng = np.random.default_rng(0)
        E = rng.uniform(0.01, 0.1, (R, K))
        N = np.full(R, 5e4)
        p = ModelParams(beta=0.25, rho=0.1, nu=0.003, gamma_e=0.4,
                        gamma_p=0.01, alpha0=np.full(R, 0.2),
                        phi=np.full(4, phi))
        init = EpidemicState(S=0.97 * N, I=0.01 * N, R=np.zeros(R),
                             V=0.02 * N, alpha=np.full(R, 0.2), N=N)
        return generate_synthetic(p, init, E, K, seed=seed, interval_days=8,
                                  substeps=2, beta_period=K, nu_period=K), E

    def test_deterministic_in_seed(self):
        ds1, _ = self.make(seed=3)
        ds2, _ = self.make(seed=3)
        ds3, _ = self.make(seed=4)
        np.testing.assert_array_equal(ds1.deltas, ds2.deltas)
        assert not np.array_equal(ds1.deltas, ds3.deltas)

    def test_exposure_roundtrip(self):
        ds, E = self.make()
        np.testing.assert_allclose(compute_exposure(ds).E, E, rtol=1e-12)

    def test_counting_identities(self):
        ds, _ = self.make()
        assert np.all(ds.C <= ds.N[:, None])
        assert np.all(ds.V <= ds.N[:, None] - ds.C)
        assert np.all(ds.R <= ds.C)
        np.testing.assert_allclose(ds.S, ds.N[:, None] - ds.C - ds.V)
        np.testing.assert_allclose(ds.I, ds.C - ds.R)
        np.testing.assert_allclose(ds.deltas[0], np.diff(ds.C, axis=1))
        np.testing.assert_allclose(ds.deltas[1], np.diff(ds.V, axis=1))
        np.testing.assert_allclose(ds.deltas[2], np.diff(ds.R, axis=1))
        assert np.all(ds.deltas[3] >= 0)

    def test_noise_matches_negbin_moments(self):
        # many identical regions, one interval: ensemble mean ~ mu and
        # variance ~ mu + mu^2/phi of the noiseless-model delta
        R, phi = 4000, 5.0
        N = np.full(R, 5e4)
        p = ModelParams(beta=0.25, rho=0.1, nu=0.003, gamma_e=0.4,
                        gamma_p=0.01, alpha0=np.full(R, 0.2),
                        phi=np.full(4, phi))
        init = EpidemicState(S=0.97 * N, I=0.01 * N, R=np.zeros(R),
                             V=0.02 * N, alpha=np.full(R, 0.2), N=N)
        E = np.full((R, 1), 0.05)
        ds = generate_synthetic(p, init, E, 1, seed=9, interval_days=8,
                                substeps=2, beta_period=1, nu_period=1)
        clean = simulate(EpidemicState(0.97 * 5e4, 0.01 * 5e4, 0.0, 0.02 * 5e4,
                                       0.2, 5e4),
                         p, exposure=np.full(1, 0.05), horizon=1, substeps=2,
                         interval_days=8, beta_period=1, nu_period=1)
        for ch in range(4):
            mu = clean.deltas[ch, 0]
            x = ds.deltas[ch, :, 0]
            sd = np.sqrt(mu + mu ** 2 / phi)
            assert abs(x.mean() - mu) < 5 * sd / np.sqrt(R)
            assert abs(x.var() / (mu + mu ** 2 / phi) - 1) < 0.15

    def test_dates_and_network(self):
        ds, _ = self.make()
        assert (ds.dates[1] - ds.dates[0]).days == 8
        np.testing.assert_array_equal(ds.W, np.eye(6))
        assert ds.region_ids == tuple(f"r{i:03d}" for i in range(6))

    def test_invalid_params_rejected(self):
        p = ModelParams(beta=-1.0, rho=0.1, nu=0.003)
        init = state()
        with pytest.raises(InputError):
            generate_synthetic(p, init, np.zeros((1, 2)), 2, seed=0)


def test_trajectory_table_layout():
    p = ModelParams(beta=0.3, rho=0.1, nu=0.002, gamma_p=0.01, alpha0=0.2)
    init = EpidemicState(S=np.array([900.0]), I=np.array([50.0]),
                         R=np.zeros(1), V=np.array([50.0]),
                         alpha=np.full(1, 0.2), N=np.array([1000.0]))
    traj = simulate(init, p, exposure=np.zeros((1, 2)), horizon=2, substeps=1,
                    interval_days=8, beta_period=99, nu_period=99)
    header, rows = trajectory_table(traj, ["zone"])
    assert header == ("region_id", "interval_index", "S", "I", "R", "V", "alpha")
    assert len(rows) == 3
    assert rows[0][:2] == ("zone", 0)
    assert rows[0][2] == 900.0
