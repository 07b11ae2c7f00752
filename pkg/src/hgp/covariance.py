"""Correlation models over set distances and Gaussian log-densities.

The four smoothness choices (1/2, 3/2, 5/2, and the squared-exponential
limit) are parameterized by the practical range `phi`: the distance at
which correlation drops to 0.05. Each family's internal scaling constant
is found once by root-finding so the pinning rho(phi) = 0.05 holds to
machine precision rather than to the accuracy of a hard-coded constant.

Because positive definiteness of these correlations composed with general
set distances is an empirical matter, factorizations go through a fixed
jitter schedule and always report the jitter actually applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import brentq

from .errors import GeometryError, NotPositiveDefiniteError

PRACTICAL_RANGE_CORRELATION = 0.05
JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

NU_CHOICES = (0.5, 1.5, 2.5, math.inf)
NU_LABELS = {0.5: "exponential", 1.5: "matern32", 2.5: "matern52", math.inf: "gaussian"}


def _shape(nu: float, u: np.ndarray) -> np.ndarray:
    """Unit-scale correlation profile for smoothness nu at scaled distance u."""
    if nu == 0.5:
        return np.exp(-u)
    if nu == 1.5:
        return (1.0 + u) * np.exp(-u)
    if nu == 2.5:
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    if nu == math.inf:
        return np.exp(-(u * u))
    raise GeometryError(f"smoothness must be one of {NU_CHOICES}, got {nu}")


@lru_cache(maxsize=None)
def range_scaling(nu: float) -> float:
    """Constant c with shape(nu, c) = 0.05, so rho hits 0.05 at d = phi."""
    _shape(nu, np.array(0.0))  # validates nu
    return float(
        brentq(
            lambda c: float(_shape(nu, np.array(c))) - PRACTICAL_RANGE_CORRELATION,
            1e-8,
            50.0,
            xtol=1e-15,
            rtol=8.9e-16,
        )
    )


@dataclass(frozen=True)
class CorrelationModel:
    """Correlation-by-distance curve: smoothness nu, practical range phi."""

    nu: float
    phi: float

    def __post_init__(self):
        if self.nu not in NU_CHOICES:
            raise GeometryError(f"smoothness must be one of {NU_CHOICES}, got {self.nu}")
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise GeometryError(f"practical range must be positive and finite, got {self.phi}")

    @property
    def label(self) -> str:
        return NU_LABELS[self.nu]


def rho(model: CorrelationModel, d) -> np.ndarray:
    """Correlation at distance(s) d; 1 at zero, 0.05 at d = phi, decreasing."""
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise GeometryError("distances must be finite")
    if np.any(d < 0):
        raise GeometryError("distances must be nonnegative")
    c = range_scaling(model.nu)
    out = _shape(model.nu, c * d / model.phi)
    return out if out.shape else float(out)


def correlation_matrix(model: CorrelationModel, distances) -> np.ndarray:
    """Elementwise rho over a distance matrix; unit diagonal by construction."""
    d = distances.values if hasattr(distances, "values") else np.asarray(distances, dtype=float)
    r = rho(model, d)
    np.fill_diagonal(r, 1.0)
    return r


def chol_with_jitter(matrix: np.ndarray, schedule=JITTER_SCHEDULE):
    """Lower Cholesky factor of matrix + j*I for the first j that works.

    Returns (factor, applied_jitter). Raises NotPositiveDefiniteError with
    the minimum eigenvalue if the whole schedule fails.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    for j in schedule:
        try:
            L = np.linalg.cholesky(matrix + j * np.eye(n) if j else matrix)
            return L, j
        except np.linalg.LinAlgError:
            continue
    lam_min = float(np.linalg.eigvalsh(matrix).min())
    raise NotPositiveDefiniteError(
        f"matrix not positive definite after jitter schedule {tuple(schedule)}; "
        f"minimum eigenvalue {lam_min:.6g}",
        min_eigenvalue=lam_min,
    )


@dataclass(frozen=True)
class CovarianceSpec:
    """Scaled correlation: covariance = R / tau + jitter * I."""

    model: CorrelationModel
    tau: float
    jitter: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise GeometryError("marginal precision tau must be positive")
        if self.jitter < 0:
            raise GeometryError("jitter must be nonnegative")


def mvn_logpdf_chol(resid: np.ndarray, factor: np.ndarray) -> float:
    """log N(resid; 0, LL') from a precomputed Cholesky factor."""
    n = len(resid)
    z = solve_triangular(factor, resid, lower=True, check_finite=False)
    return float(
        -0.5 * n * math.log(2.0 * math.pi)
        - np.sum(np.log(np.diag(factor)))
        - 0.5 * np.dot(z, z)
    )


def gp_loglik(y, mean, spec: CovarianceSpec, R: np.ndarray) -> float:
    """Gaussian log-density of y with covariance R/tau + jitter*I.

    Evaluated through the jittered Cholesky factor; no explicit inverse.
    """
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if y.shape != mean.shape or len(y) != R.shape[0]:
        raise GeometryError("y, mean, and R dimensions disagree")
    cov = R / spec.tau
    if spec.jitter:
        cov = cov + spec.jitter * np.eye(len(y))
    L, _ = chol_with_jitter(cov)
    return mvn_logpdf_chol(y - mean, L)
