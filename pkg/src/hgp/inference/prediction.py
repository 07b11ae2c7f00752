"""Posterior prediction onto new geometries for set-distance random effects.

New sites may be points, polygons, or a different partition of the same
region. Per posterior draw, the latent values at the new sites are drawn
from their Gaussian conditional given the observed-site latents, with
cross-correlations evaluated at the pairwise set distances; the linear
predictor then yields the predictive response scale (the Poisson rate or
the gaussian mean). Adjacency-based random effects have no cross-site
correlation function and are refused.
"""
from __future__ import annotations

import math

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve

from ..covariance import CorrelationModel, chol_with_jitter, rho
from ..distances import DistanceMatrix, cross_distance_matrix, distance_matrix
from ..errors import PredictionUnsupportedError, SamplerInitError
from ..geometry import GeometrySet
from .diagnostics import hpd
from .model import HGP_SMOOTHNESS, ModelSpec
from .samples import PosteriorSamples


def conditional_latent(r_obs, r_cross, r_new, s_obs, tau: float):
    """Mean and covariance of new-site latents given observed ones.

    r_obs: (n, n) observed correlation; r_cross: (m, n) new-by-observed;
    r_new: (m, m); the covariance scale 1/tau multiplies the correlation
    complement. Returns (mean (m,), cov (m, m)).
    """
    L, _ = chol_with_jitter(r_obs)
    k = cho_solve((L, True), r_cross.T).T  # r_cross @ r_obs^{-1}
    mean = k @ s_obs
    cov = (r_new - k @ r_cross.T) / tau
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _sample_mvn(mean, cov, rng):
    lam, vec = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    return mean + (vec * np.sqrt(lam)) @ rng.standard_normal(len(mean))


def predict(
    ps: PosteriorSamples,
    spec: ModelSpec,
    gs_obs: GeometrySet,
    gs_new: GeometrySet,
    new_covariates=None,
    distances_obs: DistanceMatrix = None,
    densify: float = None,
    seed: int = 0,
    level: float = 0.95,
    max_draws: int = 2000,
) -> pd.DataFrame:
    """Predictive mean and HPD interval per new site.

    Returns a frame with columns site_id, pred_mean, pred_lo, pred_hi on
    the response scale (Poisson rate, or the gaussian observation), plus
    latent_mean for the underlying field.
    """
    if not spec.is_hgp:
        raise PredictionUnsupportedError(
            f"random effect '{spec.random_effect}' defines no correlation with unobserved "
            "sites, so it cannot predict onto new geometries; refit with a set-distance model"
        )
    nu = HGP_SMOOTHNESS[spec.random_effect]
    if densify is None:
        densify = float(ps.meta.get("densify", 0.0)) or None
    if distances_obs is None:
        distances_obs = distance_matrix(gs_obs, kind="hausdorff", densify=densify)
    h_cross = cross_distance_matrix(gs_new, gs_obs, densify=distances_obs.densify)
    h_new = distance_matrix(gs_new, kind="hausdorff", densify=distances_obs.densify).values if len(gs_new) > 1 else np.zeros((1, 1))

    p = len(spec.covariates)
    if p:
        if new_covariates is None:
            raise SamplerInitError("new_covariates are required when the model has covariates")
        missing = [c for c in spec.covariates if c not in new_covariates.columns]
        if missing:
            raise SamplerInitError(f"new_covariates is missing columns: {missing}")
        if "site_id" in new_covariates.columns:
            new_covariates = (
                new_covariates.set_index(new_covariates["site_id"].astype(str))
                .loc[list(gs_new.ids)]
                .reset_index(drop=True)
            )
        x_new = np.column_stack(
            [new_covariates[c].to_numpy(dtype=float) for c in spec.covariates]
        )
    else:
        x_new = np.zeros((len(gs_new), 0))

    alpha = ps.pooled("alpha")
    betas = np.column_stack([ps.pooled(f"beta_{c}") for c in spec.covariates]) if p else None
    tau = ps.pooled("tau")
    phi = ps.pooled("phi")
    s_obs = ps.pooled_latent()
    tau_eps = ps.pooled("tau_nugget") if "tau_nugget" in ps.params else None

    n_total = len(alpha)
    take = np.arange(n_total)
    if max_draws and n_total > max_draws:
        take = np.linspace(0, n_total - 1, max_draws).round().astype(int)
    rng = np.random.default_rng(seed)

    m = len(gs_new)
    predictive = np.empty((len(take), m))
    latent_draws = np.empty((len(take), m))
    for row, i in enumerate(take):
        model = CorrelationModel(nu, float(phi[i]))
        r_obs = rho(model, distances_obs.values)
        np.fill_diagonal(r_obs, 1.0)
        r_cross = rho(model, h_cross)
        r_new = rho(model, h_new)
        np.fill_diagonal(r_new, 1.0)
        mean, cov = conditional_latent(r_obs, r_cross, r_new, s_obs[i], float(tau[i]))
        s_new = _sample_mvn(mean, cov, rng)
        latent_draws[row] = s_new
        eta = alpha[i] + (x_new @ betas[i] if p else 0.0) + s_new
        if spec.likelihood == "poisson_offset":
            predictive[row] = np.exp(eta)
        elif tau_eps is not None:
            predictive[row] = eta + rng.standard_normal(m) / math.sqrt(tau_eps[i])
        else:
            predictive[row] = eta

    rows = []
    for j, sid in enumerate(gs_new.ids):
        lo, hi = hpd(predictive[:, j], level)
        rows.append(
            {
                "site_id": sid,
                "pred_mean": float(predictive[:, j].mean()),
                "pred_lo": lo,
                "pred_hi": hi,
                "latent_mean": float(latent_draws[:, j].mean()),
            }
        )
    return pd.DataFrame(rows)
