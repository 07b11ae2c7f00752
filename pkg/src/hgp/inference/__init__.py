"""Bayesian fitting, diagnostics, comparison, and prediction."""

from .diagnostics import WaicResult, compare, ess, hpd, summary, waic
from .model import (
    HGP_SMOOTHNESS,
    LIKELIHOODS,
    RANDOM_EFFECTS,
    McmcSettings,
    ModelSpec,
    PriorSet,
    derive_phi_prior,
)
from .prediction import conditional_latent, predict
from .sampler import build_structure, fit
from .samples import (
    PosteriorSamples,
    data_fingerprint,
    posterior_from_frame,
    read_draws_csv,
    read_waic_csv,
    write_draws_csv,
    write_summary_csv,
    write_waic_csv,
)

__all__ = [
    "HGP_SMOOTHNESS",
    "LIKELIHOODS",
    "RANDOM_EFFECTS",
    "McmcSettings",
    "ModelSpec",
    "PosteriorSamples",
    "PriorSet",
    "WaicResult",
    "build_structure",
    "compare",
    "conditional_latent",
    "data_fingerprint",
    "derive_phi_prior",
    "ess",
    "fit",
    "hpd",
    "posterior_from_frame",
    "predict",
    "read_draws_csv",
    "read_waic_csv",
    "summary",
    "waic",
    "write_draws_csv",
    "write_summary_csv",
    "write_waic_csv",
]
