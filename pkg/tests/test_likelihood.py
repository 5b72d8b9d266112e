"""Negative binomial, priors, parameter layout, and the jitted posterior."""
import math

import numpy as np
import pytest
from scipy import stats

from hesitancy_lab.data_io import AlignedDataset
from hesitancy_lab.dynamics import EpidemicState, ModelParams, alpha_grid, simulate
from hesitancy_lab.errors import InputError
from hesitancy_lab.exposure import compute_exposure
from hesitancy_lab.likelihood import (
    MU_EPS,
    POSITIVE_LB,
    ParamLayout,
    Prior,
    build_log_posterior,
    default_priors,
    log_likelihood,
    log_prior,
    model_means,
    neg_binomial_log_pmf,
    predicted_deltas,
)


class TestNegBinomial:
    def test_listed_exact_points(self):
        # (1/2)*(1/2); x=0 closed form; C(3,2)*(1/2)^2*(1/2)^2 = 3/16
        assert abs(neg_binomial_log_pmf(1, 1.0, 1.0) - math.log(0.25)) < 1e-12
        for mu, phi in [(0.5, 2.0), (7.0, 1.3), (40.0, 9.0)]:
            want = phi * math.log(phi / (mu + phi))
            assert abs(neg_binomial_log_pmf(0, mu, phi) - want) < 1e-12
        assert abs(neg_binomial_log_pmf(2, 2.0, 2.0) - math.log(0.1875)) < 1e-12

    @pytest.mark.parametrize("mu,phi", [(5.0, 2.0), (0.7, 8.0), (100.0, 1.5)])
    def test_normalization(self, mu, phi):
        top = int(mu + 20 * math.sqrt(mu + mu ** 2 / phi)) + 1
        mass = np.exp(neg_binomial_log_pmf(np.arange(top + 1), mu, phi)).sum()
        assert 1 - 1e-8 <= mass <= 1 + 1e-12

    def test_matches_scipy_parameterization(self):
        # scipy uses (n, p) with n=phi, p=phi/(mu+phi)
        x = np.arange(0, 30)
        mu, phi = 6.0, 3.5
        ours = neg_binomial_log_pmf(x, mu, phi)
        theirs = stats.nbinom.logpmf(x, phi, phi / (mu + phi))
        np.testing.assert_allclose(ours, theirs, rtol=1e-12)

    def test_moments_by_direct_sum(self):
        mu, phi = 4.0, 2.5
        k = np.arange(0, 2000)
        p = np.exp(neg_binomial_log_pmf(k, mu, phi))
        assert abs((k * p).sum() - mu) < 1e-8
        assert abs((k ** 2 * p).sum() - mu ** 2 - (mu + mu ** 2 / phi)) < 1e-6

    def test_scalar_returns_float(self):
        out = neg_binomial_log_pmf(3, 2.0, 1.0)
        assert isinstance(out, float)
        assert neg_binomial_log_pmf(np.array([3]), 2.0, 1.0).shape == (1,)

    def test_domain_errors(self):
        with pytest.raises(InputError):
            neg_binomial_log_pmf(-1, 1.0, 1.0)
        with pytest.raises(InputError):
            neg_binomial_log_pmf(1, 0.0, 1.0)
        with pytest.raises(InputError):
            neg_binomial_log_pmf(1, 1.0, -2.0)


class TestPriors:
    def test_normal_matches_scipy(self):
        x = np.linspace(-1, 2, 9)
        p = Prior("normal", 0.1, 0.3)
        np.testing.assert_allclose(p.log_pdf(x), stats.norm.logpdf(x, 0.1, 0.3),
                                   rtol=1e-12)

    def test_gamma_matches_scipy_rate(self):
        x = np.linspace(0.05, 3, 9)
        p = Prior("gamma", 1.0, 6.0, lower=POSITIVE_LB)
        np.testing.assert_allclose(p.log_pdf(x),
                                   stats.gamma.logpdf(x, 1.0, scale=1 / 6),
                                   rtol=1e-12)

    def test_truncation_is_unnormalized(self):
        p = Prior("normal", 0.2, 0.5, lower=POSITIVE_LB, upper=1.0)
        assert p.log_pdf(-0.1) == -np.inf
        assert p.log_pdf(1.2) == -np.inf
        # density inside the bounds keeps the untruncated normal value
        assert np.isclose(p.log_pdf(0.5), stats.norm.logpdf(0.5, 0.2, 0.5))

    def test_unknown_family(self):
        with pytest.raises(InputError):
            Prior("cauchy", 0.0, 1.0).log_pdf(0.0)

    def test_default_prior_table(self):
        d = default_priors()
        assert d["rho"] == Prior("normal", 0.1, 0.3, lower=POSITIVE_LB)
        assert d["beta"] == Prior("normal", 0.2, 0.3, lower=POSITIVE_LB)
        assert d["nu"] == Prior("normal", 0.0025, 0.1, lower=POSITIVE_LB)
        assert d["gamma_e"] == Prior("normal", 0.0, 1.0)
        assert d["gamma_p"] == Prior("normal", 0.0, 0.5)
        assert d["gamma_a"] == Prior("normal", 0.0, 0.5)
        assert d["alpha0"] == Prior("normal", 0.2, 0.5, lower=POSITIVE_LB,
                                    upper=1.0)
        assert d["phi"] == Prior("gamma", 1.0, 6.0, lower=POSITIVE_LB)

    def test_log_prior_sums_variant_blocks(self):
        p = ModelParams(beta=0.3, rho=0.15, nu=0.004, gamma_e=0.2,
                        gamma_p=0.05, gamma_a=0.1,
                        alpha0=np.array([0.2, 0.4]), phi=np.full(4, 0.5))
        d = default_priors()
        want = (
            stats.norm.logpdf(0.3, 0.2, 0.3)
            + stats.norm.logpdf(0.15, 0.1, 0.3)
            + stats.norm.logpdf(0.004, 0.0025, 0.1)
            + stats.norm.logpdf(0.2, 0, 1)
            + stats.norm.logpdf(0.05, 0, 0.5)
            + stats.norm.logpdf([0.2, 0.4], 0.2, 0.5).sum()
            + stats.gamma.logpdf(np.full(4, 0.5), 1.0, scale=1 / 6).sum()
        )
        assert np.isclose(log_prior(p, variant="sirva"), want, rtol=1e-12)
        # wom adds the gamma_a block, sirv drops hesitancy blocks entirely
        assert np.isclose(log_prior(p, variant="sirva_wom") - log_prior(p),
                          stats.norm.logpdf(0.1, 0, 0.5))
        d_sirv = (
            stats.norm.logpdf(0.3, 0.2, 0.3)
            + stats.norm.logpdf(0.15, 0.1, 0.3)
            + stats.norm.logpdf(0.004, 0.0025, 0.1)
            + stats.gamma.logpdf(np.full(4, 0.5), 1.0, scale=1 / 6).sum()
        )
        assert np.isclose(log_prior(p, variant="sirv"), d_sirv, rtol=1e-12)

    def test_out_of_support_gives_minus_inf(self):
        p = ModelParams(beta=-0.1, rho=0.1, nu=0.004)
        assert log_prior(p, variant="sirv") == -np.inf


class TestLayout:
    def test_names_and_dim(self):
        lay = ParamLayout.build("sirva", ("x", "y"), 10, beta_period=3,
                                nu_period=6)
        assert lay.names == (
            "beta[0]", "beta[1]", "beta[2]", "beta[3]", "rho", "nu[0]",
            "nu[1]", "gamma_e", "gamma_p", "alpha0[x]", "alpha0[y]",
            "phi_C", "phi_V", "phi_R", "phi_S",
        )
        assert lay.dim == 15

    def test_single_period_uses_plain_names(self):
        lay = ParamLayout.build("sirv", ("x",), 10, beta_period=10,
                                nu_period=10)
        assert lay.names == ("beta", "rho", "nu", "phi_C", "phi_V", "phi_R",
                             "phi_S")

    def test_pack_unpack_roundtrip(self):
        lay = ParamLayout.build("sirva_wom", ("a", "b", "c"), 6,
                                beta_period=2, nu_period=3)
        rng = np.random.default_rng(8)
        z = rng.normal(0, 1, lay.dim)
        params = lay.unpack(z)
        np.testing.assert_allclose(lay.pack(params), z, atol=1e-9)
        params.validate()

    def test_constrain_unconstrain_inverse(self):
        lay = ParamLayout.build("sirva", ("a", "b"), 5)
        rng = np.random.default_rng(3)
        Z = rng.normal(0, 1.5, (7, lay.dim))
        X = lay.constrain_array(Z)
        np.testing.assert_allclose(lay.unconstrain_array(X), Z, atol=1e-8)
        sl = lay.slices()
        assert np.all(X[:, sl["alpha0"]] > 0) and np.all(X[:, sl["alpha0"]] < 1)
        assert np.all(X[:, sl["phi"]] > 0)

    def test_pack_rejects_wrong_block_length(self):
        lay = ParamLayout.build("sirva", ("a",), 10, beta_period=3)
        p = ModelParams(beta=0.2, rho=0.1, nu=0.001, alpha0=0.2,
                        phi=np.full(4, 1.0))
        with pytest.raises(InputError, match="beta"):
            lay.pack(p)

    def test_unpack_rejects_wrong_shape(self):
        lay = ParamLayout.build("sirv", ("a",), 4)
        with pytest.raises(InputError, match="length"):
            lay.unpack(np.zeros(lay.dim + 1))

    def test_unconstrain_rejects_out_of_bounds(self):
        lay = ParamLayout.build("sirva", ("a",), 4, beta_period=4, nu_period=4)
        p = ModelParams(beta=0.2, rho=0.1, nu=0.001, alpha0=1.0,
                        phi=np.full(4, 1.0))
        with pytest.raises(InputError, match="bounds"):
            lay.pack(p)

    def test_initial_point_is_prior_guess(self):
        lay = ParamLayout.build("sirva", ("a", "b"), 8, beta_period=8,
                                nu_period=8)
        p = lay.unpack(lay.initial_point())
        p.validate()
        np.testing.assert_allclose(p.phi, 1 / 6)  # gamma mode guess a/b
        np.testing.assert_allclose(p.beta, 0.2, atol=1e-9)


def tiny_dataset(R=2, K=3, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.01, 0.08, (R, K))
    N = np.full(R, 1e4)
    p = ModelParams(beta=0.3, rho=0.12, nu=0.004, gamma_e=0.6, gamma_p=0.01,
                    alpha0=np.full(R, 0.25), phi=np.full(4, 20.0))
    init = EpidemicState(S=0.96 * N, I=0.02 * N, R=np.zeros(R), V=0.02 * N,
                         alpha=np.full(R, 0.25), N=N)
    from hesitancy_lab.dynamics import generate_synthetic

    ds = generate_synthetic(p, init, E, K, seed=seed + 1, interval_days=4,
                            substeps=2, beta_period=K, nu_period=K)
    return ds, p


def states_only_dataset(C, V, N=1e4, interval_days=4):
    """Dataset with I = 0 everywhere (cases equal the lag proxy)."""
    C = np.asarray(C, float)[None, :]
    V = np.asarray(V, float)[None, :]
    R = np.concatenate([C[:, :1], C[:, :-1]], axis=1)
    S = N - C - V
    K = C.shape[1] - 1
    deltas = np.stack([np.diff(C, axis=1), np.diff(V, axis=1),
                       np.diff(R, axis=1), -np.diff(S, axis=1)])
    return AlignedDataset(
        region_ids=("solo",), N=np.array([N]), dates=tuple(range(K + 1)),
        interval_days=interval_days, S=S, I=C - R, R=R, V=V, C=C,
        D=np.zeros_like(C), deltas=np.maximum(deltas, 0.0),
        posts=np.zeros((1, K)), W=np.eye(1),
    )


class TestModelMeans:
    def test_restart_simulation_oracle(self):
        # rebuild every one-step-ahead mean by restarting simulate() from the
        # observed boundary state; must agree with the inline recursion
        ds, p = tiny_dataset()
        E = compute_exposure(ds).E
        mus = model_means(p, ds, substeps=2, beta_period=3, nu_period=6)
        agrid = alpha_grid(p.gamma_e, p.gamma_p, p.gamma_a, p.alpha0, E,
                           ds.interval_days, 2)
        want = np.empty_like(mus)
        for k in range(ds.n_intervals):
            start = EpidemicState(ds.S[:, k], ds.I[:, k], ds.R[:, k],
                                  ds.V[:, k], agrid[:, k], ds.N)
            traj = simulate(start, p, E[:, k:k + 1], 1, substeps=2,
                            interval_days=4, beta_period=9, nu_period=9)
            want[:, :, k] = traj.deltas[:, 0]
        np.testing.assert_allclose(mus, np.maximum(want, MU_EPS), rtol=1e-12)

    def test_outflow_channel_is_sum_of_case_and_vaccine_channels(self):
        ds, p = tiny_dataset()
        mus = model_means(p, ds, substeps=2)
        assert np.all(mus > MU_EPS)
        np.testing.assert_allclose(mus[3], mus[0] + mus[1], rtol=1e-12)

    def test_likelihood_is_sum_of_channel_pmfs(self):
        ds, p = tiny_dataset()
        mus = model_means(p, ds, substeps=2)
        want = sum(
            float(np.sum(neg_binomial_log_pmf(ds.deltas[j], mus[j], p.phi[j])))
            for j in range(4)
        )
        got = log_likelihood(p, ds, substeps=2)
        assert np.isclose(got, want, rtol=1e-12)

    def test_additive_over_regions(self):
        ds, p = tiny_dataset()
        import dataclasses

        parts = []
        for i, rid in enumerate(ds.region_ids):
            sub = ds.restrict([rid])
            pi = dataclasses.replace(p, alpha0=p.alpha0[i:i + 1])
            parts.append(log_likelihood(pi, sub, substeps=2))
        assert np.isclose(log_likelihood(p, ds, substeps=2), sum(parts),
                          rtol=1e-12)

    def test_blowup_raises(self):
        ds, p = tiny_dataset()
        import dataclasses

        bad = dataclasses.replace(p, nu=np.array([np.inf]))
        with np.errstate(invalid="ignore"), pytest.raises(InputError,
                                                          match="non-finite"):
            log_likelihood(bad, ds, substeps=2)

    def test_exposure_shape_checked(self):
        ds, p = tiny_dataset()
        with pytest.raises(InputError, match="shape"):
            model_means(p, ds, exposure=np.zeros((2, 9)))


class TestPredictedDeltas:
    def make_inputs(self):
        ds = states_only_dataset(C=[5, 5, 5, 5], V=[100, 120, 150, 160])
        p = ModelParams(beta=0.3, rho=0.1, nu=0.005, alpha0=0.0,
                        phi=np.full(4, 10.0))
        return ds, p

    def test_vaccination_only_closed_form(self):
        ds, p = self.make_inputs()
        E = np.zeros((1, 3))
        mu = predicted_deltas(p, ds, "solo", 1, exposure=E, substeps=2)
        S0 = 1e4 - 5 - 100
        euler = S0 * (1 - (1 - 0.005 * 2.0) ** 2)  # dt = 4 days / 2 substeps
        assert mu[1] == pytest.approx(euler, rel=1e-12)
        assert mu[1] == pytest.approx(S0 * (1 - math.exp(-0.005 * 4)), rel=1e-2)
        # no infected: case and recovery channels sit on the floor
        assert mu[0] == MU_EPS and mu[2] == MU_EPS
        assert mu[3] == pytest.approx(mu[1])

    def test_interval_is_one_based(self):
        ds, p = self.make_inputs()
        E = np.zeros((1, 3))
        by_int = [predicted_deltas(p, ds, 0, k, exposure=E, substeps=2)[1]
                  for k in (1, 2, 3)]
        # susceptibles shrink between boundaries, so means strictly decrease
        assert by_int[0] > by_int[1] > by_int[2]
        with pytest.raises(InputError, match="interval"):
            predicted_deltas(p, ds, 0, 0, exposure=E)
        with pytest.raises(InputError, match="interval"):
            predicted_deltas(p, ds, 0, 4, exposure=E)
        with pytest.raises(KeyError):
            predicted_deltas(p, ds, "nope", 1, exposure=E)

    def test_all_zero_observations_hit_floor_pmf(self):
        ds = states_only_dataset(C=[5, 5], V=[100, 100])
        p = ModelParams(beta=0.3, rho=0.1, nu=0.005, alpha0=1.0,
                        phi=np.array([1.0, 2.0, 3.0, 4.0]))
        # alpha pinned at 1 kills vaccination; I=0 kills the rest
        want = sum(phi * math.log(phi / (MU_EPS + phi))
                   for phi in (1.0, 2.0, 3.0, 4.0))
        got = log_likelihood(p, ds, exposure=np.zeros((1, 1)), substeps=2,
                             variant="sirva_static")
        assert np.isclose(got, want, rtol=1e-12)


class TestJaxPath:
    def log_jacobian(self, layout, z):
        out, sl = 0.0, layout.slices()
        for name, _, transform, _, _, _, lower, upper in layout.blocks:
            y = z[sl[name]]
            if transform == "log":
                out += float(np.sum(y))
            elif transform == "logit":
                logsig = lambda v: -np.logaddexp(0.0, -v)
                out += float(np.sum(math.log(upper - lower) + logsig(y)
                                    + logsig(-y)))
        return out

    def test_matches_numpy_route(self, small_dataset):
        lp = build_log_posterior(small_dataset, variant="sirva",
                                 beta_period=10, nu_period=10, substeps=2)
        rng = np.random.default_rng(17)
        for _ in range(3):
            z = lp.layout.initial_point() + 0.3 * rng.standard_normal(lp.dim)
            params = lp.layout.unpack(z)
            want = (
                log_likelihood(params, small_dataset, substeps=2,
                               beta_period=10, nu_period=10)
                + log_prior(params, variant="sirva")
                + self.log_jacobian(lp.layout, z)
            )
            got = lp.value(z)
            assert np.isclose(got, want, rtol=1e-10)

    def test_gradient_matches_finite_differences(self, small_dataset):
        lp = build_log_posterior(small_dataset, variant="sirva",
                                 beta_period=10, nu_period=10, substeps=2)
        rng = np.random.default_rng(4)
        h = 1e-5
        for _ in range(5):
            z = lp.layout.initial_point() + 0.2 * rng.standard_normal(lp.dim)
            _, g = lp.value_and_grad(z)
            fd = np.empty_like(g)
            for i in range(lp.dim):
                e = np.zeros(lp.dim)
                e[i] = h
                fd[i] = (lp.value(z + e) - lp.value(z - e)) / (2 * h)
            assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-5

    def test_pointwise_sums_to_joint_likelihood(self, small_dataset):
        lp = build_log_posterior(small_dataset, variant="sirva",
                                 beta_period=10, nu_period=10, substeps=2)
        rng = np.random.default_rng(9)
        z = lp.layout.initial_point() + 0.1 * rng.standard_normal(lp.dim)
        pw = lp.pointwise_loglik(z[None, :])
        assert pw.shape == (1, small_dataset.n_regions
                            * small_dataset.n_intervals * 4)
        params = lp.layout.unpack(z)
        want = log_likelihood(params, small_dataset, substeps=2,
                              beta_period=10, nu_period=10)
        assert np.isclose(pw.sum(), want, rtol=1e-10)

    def test_pointwise_ordering_region_interval_channel(self, small_dataset):
        lp = build_log_posterior(small_dataset, variant="sirva",
                                 beta_period=10, nu_period=10, substeps=2)
        z = lp.layout.initial_point()
        pw = lp.pointwise_loglik(z[None, :])[0]
        params = lp.layout.unpack(z)
        mus = model_means(params, small_dataset, substeps=2, beta_period=10,
                          nu_period=10)
        i, k, j = 2, 7, 1
        K = small_dataset.n_intervals
        want = neg_binomial_log_pmf(small_dataset.deltas[j, i, k],
                                    mus[j, i, k], params.phi[j])
        assert np.isclose(pw[(i * K + k) * 4 + j], want, rtol=1e-10)

    def test_region_mismatch_rejected(self, small_dataset):
        exp = compute_exposure(small_dataset)
        sub = small_dataset.restrict([small_dataset.region_ids[0]])
        with pytest.raises(InputError, match="regions differ"):
            build_log_posterior(sub, exposure=exp)
