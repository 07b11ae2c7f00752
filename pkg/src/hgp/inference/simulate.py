"""Synthetic data generation from the set-distance random-effect model."""
from __future__ import annotations

import math

import numpy as np

from ..covariance import CorrelationModel, chol_with_jitter, correlation_matrix


def latent_field_draw(distances, nu: float, phi: float, tau: float, rng) -> np.ndarray:
    """One draw of the zero-mean latent field with marginal precision tau."""
    corr = correlation_matrix(CorrelationModel(nu, phi), distances)
    factor, _ = chol_with_jitter(corr)
    n = corr.shape[0]
    return factor @ rng.standard_normal(n) / math.sqrt(tau)
