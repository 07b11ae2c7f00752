import numpy as np
import pandas as pd
import pytest
from scipy import stats

from hgp.covariance import CorrelationModel, chol_with_jitter, correlation_matrix
from hgp.distances import distance_matrix
from hgp.errors import SamplerInitError
from hgp.geometry import GeometrySet, Point
from hgp.inference import (
    McmcSettings,
    ModelSpec,
    PosteriorSamples,
    PriorSet,
    fit,
    posterior_from_frame,
    read_draws_csv,
    summary,
    write_draws_csv,
)
from hgp.inference.diagnostics import ess

from conftest import unit_square


def point_set(rng, n, extent=10.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    return GeometrySet([(f"p{i}", Point(*xy[i])) for i in range(n)])


def simulate_gaussian_field(gs, distances, nu, phi, tau, rng):
    corr = correlation_matrix(CorrelationModel(nu, phi), distances)
    factor, _ = chol_with_jitter(corr)
    return factor @ rng.standard_normal(len(gs)) / np.sqrt(tau)


def mcmc(**kw):
    base = dict(n_chains=1, burn_in=0.5, seed=1, ess_target=1e18)
    base.update(kw)
    return McmcSettings(**base)


def irls_poisson(y, x_design, log_offset):
    beta = np.zeros(x_design.shape[1])
    for _ in range(100):
        eta = log_offset + x_design @ beta
        mu = np.exp(eta)
        wx = x_design * mu[:, None]
        z = eta - log_offset + (y - mu) / mu
        new = np.linalg.solve(x_design.T @ wx, wx.T @ z)
        if np.max(np.abs(new - beta)) < 1e-12:
            return new
        beta = new
    return beta


class TestGaussianRecovery:
    def test_synthetic_field_recovered(self):
        rng = np.random.default_rng(3)
        gs = point_set(rng, 30)
        dm = distance_matrix(gs, "hausdorff")
        phi_true = float(np.median(dm.offdiagonal()))
        s = simulate_gaussian_field(gs, dm, 0.5, phi_true, 1.0, rng)
        table = pd.DataFrame({"site_id": gs.ids, "y": 1.0 + s})
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            mcmc=mcmc(max_iterations=6000, seed=11, ess_target=400),
        )
        ps = fit(spec, gs, table, distances=dm)
        sm = summary(ps, include_latent=False).set_index("parameter")
        for name, truth in (("alpha", 1.0), ("tau", 1.0), ("phi", phi_true)):
            pooled = ps.pooled(name)
            assert abs(pooled.mean() - truth) < 3 * pooled.std(), name
        assert set(sm.index) == {"alpha", "tau", "phi"}


class TestGlmDegeneracy:
    def test_matches_irls_when_field_suppressed(self):
        rng = np.random.default_rng(8)
        n = 60
        gs = point_set(rng, n)
        x = rng.standard_normal(n)
        offset = np.full(n, 15.0)
        y = rng.poisson(offset * np.exp(0.2 + 0.4 * x)).astype(float)
        table = pd.DataFrame({"site_id": gs.ids, "y": y, "E": offset, "x": x})
        spec = ModelSpec(
            likelihood="poisson_offset",
            random_effect="hgp_exp",
            response="y",
            offset="E",
            covariates=("x",),
            mcmc=mcmc(
                max_iterations=12000, seed=6, ess_target=500, fixed={"tau": 1e12, "phi": 1.0}
            ),
        )
        ps = fit(spec, gs, table)
        oracle = irls_poisson(y, np.column_stack([np.ones(n), x]), np.log(offset))
        alpha = ps.pooled("alpha")
        beta = ps.pooled("beta_x")
        assert abs(alpha.mean() - oracle[0]) < 2 * alpha.std()
        assert abs(beta.mean() - oracle[1]) < 2 * beta.std()
        assert np.abs(ps.pooled_latent()).max() < 1e-4


class TestPriorReproduction:
    def test_no_data_fit_reproduces_priors(self):
        rng = np.random.default_rng(0)
        gs = point_set(rng, 5)
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response=None,
            mcmc=mcmc(max_iterations=40000, burn_in=0.25, seed=4, thin=3),
        )
        ps = fit(spec, gs)
        alpha = ps.pooled("alpha")
        assert len(alpha) == 10000
        assert stats.kstest(alpha, stats.norm(0, 100).cdf).statistic < 0.05
        lo, hi = ps.meta["phi_bounds"]
        phi = ps.pooled("phi")
        assert stats.kstest(phi, stats.uniform(lo, hi - lo).cdf).statistic < 0.05

    def test_no_data_tau_prior_long_run(self):
        rng = np.random.default_rng(0)
        gs = point_set(rng, 5)
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response=None,
            mcmc=mcmc(max_iterations=130000, burn_in=0.23, seed=4, thin=10),
        )
        ps = fit(spec, gs)
        tau = ps.pooled("tau")
        assert len(tau) >= 10000
        assert stats.kstest(tau, stats.gamma(a=1.0, scale=1 / 5e-5).cdf).statistic < 0.05


class TestDetailedBalance:
    def test_two_parameter_grid_posterior(self):
        """Marginals from MCMC match an exact grid posterior within TV 0.05."""
        gs = GeometrySet([("a", Point(0, 0)), ("b", Point(1.5, 0))])
        dm = distance_matrix(gs, "hausdorff")
        y = np.array([0.8, -0.4])
        table = pd.DataFrame({"site_id": gs.ids, "y": y})
        phi0 = 2.0
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            priors=PriorSet(alpha_sd=10.0, tau_shape=2.0, tau_rate=1.0, phi_bounds=(0.5, 5.0)),
            mcmc=mcmc(max_iterations=100000, seed=5, fixed={"phi": phi0}),
        )
        ps = fit(spec, gs, table, distances=dm)
        alpha = ps.pooled("alpha")
        tau = ps.pooled("tau")
        assert len(alpha) == 50000

        corr = correlation_matrix(CorrelationModel(0.5, phi0), dm)
        corr_inv = np.linalg.inv(corr)
        logdet = np.linalg.slogdet(corr)[1]
        a_grid = np.linspace(-3, 3, 401)
        t_grid = np.exp(np.linspace(np.log(0.01), np.log(40), 400))
        lp = np.empty((401, 400))
        for i, a in enumerate(a_grid):
            resid = y - a
            quad = resid @ corr_inv @ resid
            loglik = np.log(t_grid) - 0.5 * logdet - 0.5 * t_grid * quad
            lp[i] = loglik - 0.5 * (a / 10.0) ** 2 + np.log(t_grid) - t_grid
        mass = np.exp(lp - lp.max()) * np.gradient(t_grid)[None, :]

        pa = mass.sum(axis=1)
        pa /= pa.sum()
        edges = np.concatenate([[-np.inf], 0.5 * (a_grid[1:] + a_grid[:-1]), [np.inf]])
        hist = np.histogram(alpha, bins=edges)[0] / len(alpha)
        assert 0.5 * np.abs(pa - hist).sum() < 0.05

        pt = mass.sum(axis=0)
        pt /= pt.sum()
        t_edges = np.concatenate([[0], np.sqrt(t_grid[1:] * t_grid[:-1]), [np.inf]])
        hist_t = np.histogram(tau, bins=t_edges)[0] / len(tau)
        assert 0.5 * np.abs(pt - hist_t).sum() < 0.05


class TestCollapsedVersusUncollapsed:
    def test_posterior_means_agree(self):
        rng = np.random.default_rng(21)
        gs = point_set(rng, 20)
        dm = distance_matrix(gs, "hausdorff")
        phi_true = float(np.median(dm.offdiagonal()))
        s = simulate_gaussian_field(gs, dm, 0.5, phi_true, 1.0, rng)
        y = 0.5 + s + 0.3 * rng.standard_normal(20)
        table = pd.DataFrame({"site_id": gs.ids, "y": y})
        priors = PriorSet(tau_shape=2.0, tau_rate=1.0, nugget_shape=2.0, nugget_rate=0.2)
        collapsed = fit(
            ModelSpec(
                likelihood="gaussian",
                random_effect="hgp_exp",
                response="y",
                nugget=True,
                priors=priors,
                mcmc=mcmc(max_iterations=24000, seed=3, collapse_gaussian=True),
            ),
            gs,
            table,
            distances=dm,
        )
        uncollapsed = fit(
            ModelSpec(
                likelihood="gaussian",
                random_effect="hgp_exp",
                response="y",
                nugget=True,
                priors=priors,
                mcmc=mcmc(max_iterations=80000, thin=2, seed=3, collapse_gaussian=False),
            ),
            gs,
            table,
            distances=dm,
        )
        for name in ("alpha", "tau", "phi"):
            a = collapsed.pooled(name)
            b = uncollapsed.pooled(name)
            se = np.sqrt(a.var() / ess(a) + b.var() / ess(b))
            assert abs(a.mean() - b.mean()) < 4 * se, name

    def test_uncollapsed_without_nugget_rejected(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 5)
        table = pd.DataFrame({"site_id": gs.ids, "y": rng.standard_normal(5)})
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            nugget=False,
            mcmc=mcmc(max_iterations=100, collapse_gaussian=False),
        )
        with pytest.raises(SamplerInitError, match="nugget"):
            fit(spec, gs, table)


class TestDeterminismAndLedgers:
    def test_bit_identical_reruns(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 8)
        x = rng.standard_normal(8)
        y = rng.poisson(5.0 * np.exp(0.2 * x)).astype(float)
        table = pd.DataFrame({"site_id": gs.ids, "y": y, "E": np.full(8, 5.0), "x": x})
        spec = ModelSpec(
            likelihood="poisson_offset",
            random_effect="hgp_exp",
            response="y",
            offset="E",
            covariates=("x",),
            mcmc=mcmc(n_chains=2, max_iterations=1500, seed=9, ess_target=1e18),
        )
        ps1 = fit(spec, gs, table)
        ps2 = fit(spec, gs, table)
        for name in ps1.param_names:
            for c in range(2):
                assert np.array_equal(ps1.params[name][c], ps2.params[name][c])
        for c in range(2):
            assert np.array_equal(ps1.latent[c], ps2.latent[c])
            assert np.array_equal(ps1.pointwise[c], ps2.pointwise[c])

    def test_chains_distinct_and_pooled(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 5)
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response=None,
            mcmc=mcmc(n_chains=2, max_iterations=2000, seed=9),
        )
        ps = fit(spec, gs)
        assert not np.array_equal(ps.params["alpha"][0], ps.params["alpha"][1])
        assert len(ps.pooled("alpha")) == ps.n_draws

    def test_ess_stopping_halts_early(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 10)
        s = rng.standard_normal(10)
        table = pd.DataFrame({"site_id": gs.ids, "y": 1.0 + s})
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            mcmc=McmcSettings(
                n_chains=1, max_iterations=50000, burn_in=0.1, seed=3, ess_target=60
            ),
        )
        ps = fit(spec, gs, table)
        assert ps.converged == (True,)
        assert ps.stop_iterations[0] < 50000

    def test_icar_jitter_ledger(self):
        gs = GeometrySet(
            [("a", unit_square()), ("b", unit_square(1, 0)), ("c", unit_square(2, 0))]
        )
        y = np.array([3.0, 5.0, 4.0])
        table = pd.DataFrame({"site_id": gs.ids, "y": y, "E": np.full(3, 4.0)})
        spec = ModelSpec(
            likelihood="poisson_offset",
            random_effect="icar",
            response="y",
            offset="E",
            mcmc=mcmc(max_iterations=600, seed=1),
        )
        ps = fit(spec, gs, table)
        assert ps.max_jitter >= 1e-10  # intrinsic null space pinned by the schedule
        assert "psi" not in ps.param_names

    def test_fixed_parameters_stay_fixed(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 6)
        table = pd.DataFrame({"site_id": gs.ids, "y": rng.standard_normal(6)})
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            mcmc=mcmc(max_iterations=800, seed=5, fixed={"tau": 2.5}),
        )
        ps = fit(spec, gs, table)
        assert np.all(ps.pooled("tau") == 2.5)
        assert "tau" not in ps.acceptance

    def test_nonpd_proposals_rejected_and_counted(self):
        # squared-exponential correlation over polygon worst-case distances is
        # not guaranteed positive definite; offending proposals must be
        # rejected (zero density) and surfaced in the ledger
        rng = np.random.default_rng(3)
        nodes = np.stack(
            np.meshgrid(np.arange(7, dtype=float), np.arange(6, dtype=float), indexing="ij"),
            axis=-1,
        )
        nodes += rng.uniform(-0.15, 0.15, nodes.shape)
        from hgp.geometry import Polygon

        sites = []
        for i in range(6):
            for j in range(5):
                ring = [nodes[i, j], nodes[i + 1, j], nodes[i + 1, j + 1], nodes[i, j + 1]]
                sites.append((f"s{i}{j}", Polygon(ring)))
        gs = GeometrySet(sites)
        n = len(gs)
        x = rng.standard_normal(n)
        e = np.full(n, 20.0)
        y = rng.poisson(e * np.exp(0.1 + 0.3 * x)).astype(float)
        table = pd.DataFrame({"site_id": gs.ids, "y": y, "E": e, "x": x})
        spec = ModelSpec(
            likelihood="poisson_offset",
            random_effect="hgp_gauss",
            response="y",
            offset="E",
            covariates=("x",),
            mcmc=mcmc(max_iterations=4000, seed=2, ess_target=200),
        )
        ps = fit(spec, gs, table)
        assert ps.meta["pd_rejections"][0] > 0
        assert np.all(np.isfinite(ps.pooled("phi")))

    def test_acceptance_rates_recorded(self):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 6)
        table = pd.DataFrame({"site_id": gs.ids, "y": rng.standard_normal(6)})
        spec = ModelSpec(
            likelihood="gaussian",
            random_effect="hgp_exp",
            response="y",
            mcmc=mcmc(max_iterations=2000, seed=5),
        )
        ps = fit(spec, gs, table)
        for name, rates in ps.acceptance.items():
            assert 0.0 < rates[0] < 1.0, name


class TestValidationErrors:
    def test_nonpositive_offset_names_site(self):
        gs = GeometrySet([("good", Point(0, 0)), ("badsite", Point(1, 0))])
        table = pd.DataFrame(
            {"site_id": gs.ids, "y": [1.0, 2.0], "E": [1.0, 0.0]}
        )
        spec = ModelSpec(
            likelihood="poisson_offset", random_effect="hgp_exp", response="y", offset="E",
            priors=PriorSet(phi_bounds=(0.1, 5.0)),
        )
        with pytest.raises(SamplerInitError, match="badsite"):
            fit(spec, gs, table)

    def test_missing_covariate(self):
        gs = GeometrySet([("a", Point(0, 0)), ("b", Point(1, 0))])
        table = pd.DataFrame({"site_id": gs.ids, "y": [0.1, 0.2]})
        spec = ModelSpec(
            likelihood="gaussian", random_effect="hgp_exp", response="y", covariates=("x",),
            priors=PriorSet(phi_bounds=(0.1, 5.0)),
        )
        with pytest.raises(SamplerInitError, match="covariate"):
            fit(spec, gs, table)

    def test_missing_response_column(self):
        gs = GeometrySet([("a", Point(0, 0)), ("b", Point(1, 0))])
        table = pd.DataFrame({"site_id": gs.ids})
        spec = ModelSpec(
            likelihood="gaussian", random_effect="hgp_exp", response="y",
            priors=PriorSet(phi_bounds=(0.1, 5.0)),
        )
        with pytest.raises(SamplerInitError, match="response"):
            fit(spec, gs, table)

    def test_table_reordered_by_site_id(self):
        rng = np.random.default_rng(10)
        gs = point_set(rng, 6)
        y = rng.standard_normal(6)
        table = pd.DataFrame({"site_id": gs.ids, "y": y}).iloc[::-1].reset_index(drop=True)
        spec = ModelSpec(
            likelihood="gaussian", random_effect="hgp_exp", response="y",
            mcmc=mcmc(max_iterations=400, seed=2),
        )
        ps = fit(spec, gs, table)  # must align despite reversed row order
        assert ps.site_ids == gs.ids


class TestDrawsCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        gs = point_set(rng, 4)
        table = pd.DataFrame({"site_id": gs.ids, "y": rng.standard_normal(4)})
        spec = ModelSpec(
            likelihood="gaussian", random_effect="hgp_exp", response="y",
            mcmc=mcmc(n_chains=2, max_iterations=600, seed=5),
        )
        ps = fit(spec, gs, table)
        path = tmp_path / "draws.csv"
        write_draws_csv(ps, path)
        frame, meta = read_draws_csv(path)
        back = posterior_from_frame(frame, meta)
        assert back.data_fingerprint == ps.data_fingerprint
        assert back.site_ids == ps.site_ids
        for name in ps.param_names:
            assert np.array_equal(back.pooled(name), ps.pooled(name))
        assert np.array_equal(back.pooled_latent(), ps.pooled_latent())
