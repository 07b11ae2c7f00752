"""Model specification types: likelihood, random effect, priors, MCMC settings."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import GeometryError

LIKELIHOODS = ("poisson_offset", "gaussian")

RANDOM_EFFECTS = ("hgp_exp", "hgp_m32", "hgp_m52", "hgp_gauss", "icar", "bym2", "leroux")
HGP_SMOOTHNESS = {"hgp_exp": 0.5, "hgp_m32": 1.5, "hgp_m52": 2.5, "hgp_gauss": math.inf}


@dataclass
class PriorSet:
    """Priors for the fixed effects and the random-effect parameters.

    phi_bounds is normally left None and derived from the fitted distance
    matrix: the lower bound is the smallest positive pairwise distance and
    the upper bound half the largest, so the correlation at the closest
    pair (respectively at half the maximum distance) can reach 0.05.
    """

    alpha_sd: float = 100.0
    beta_sd: float = 100.0
    tau_shape: float = 1.0
    tau_rate: float = 5e-5
    phi_bounds: tuple = None
    nugget_shape: float = 1.0
    nugget_rate: float = 5e-5

    def validate(self):
        for name in ("alpha_sd", "beta_sd", "tau_shape", "tau_rate", "nugget_shape", "nugget_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise GeometryError(f"prior hyperparameter {name} must be positive and finite")
        if self.phi_bounds is not None:
            a, b = self.phi_bounds
            if not (math.isfinite(a) and math.isfinite(b) and 0 < a < b):
                raise GeometryError(f"phi bounds must satisfy 0 < a < b, got ({a}, {b})")


@dataclass
class McmcSettings:
    """Adaptive componentwise random-walk Metropolis settings.

    Sampling runs past burn-in until the effective sample size of the
    log-likelihood trace reaches `ess_target` (split across chains) or
    `max_iterations` is hit, whichever comes first. Proposal scales adapt
    toward `target_acceptance` during burn-in only and are frozen after.
    `fixed` pins named parameters at given values (useful for degeneracy
    checks and collapsed/uncollapsed comparisons).
    """

    n_chains: int = 1
    max_iterations: int = 20000
    burn_in: float = 0.5
    thin: int = 1
    seed: int = 0
    ess_target: float = 1000.0
    adapt_interval: int = 50
    target_acceptance: float = 0.44
    collapse_gaussian: bool = True
    fixed: dict = field(default_factory=dict)

    def validate(self):
        if self.n_chains < 1 or self.max_iterations < 1 or self.thin < 1:
            raise GeometryError("n_chains, max_iterations, and thin must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise GeometryError("burn_in must be a fraction in [0, 1)")
        if not self.ess_target > 0:
            raise GeometryError("ess_target must be positive")
        if self.adapt_interval < 1:
            raise GeometryError("adapt_interval must be >= 1")
        if not 0.0 < self.target_acceptance < 1.0:
            raise GeometryError("target_acceptance must be in (0, 1)")

    @property
    def n_burn(self) -> int:
        return int(self.burn_in * self.max_iterations)


@dataclass
class ModelSpec:
    """What to fit: likelihood, columns, random effect, priors, and MCMC plan."""

    likelihood: str
    random_effect: str
    response: str = None
    covariates: tuple = ()
    offset: str = None
    nugget: bool = False
    priors: PriorSet = field(default_factory=PriorSet)
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def __post_init__(self):
        self.covariates = tuple(self.covariates)
        if self.likelihood not in LIKELIHOODS:
            raise GeometryError(f"likelihood must be one of {LIKELIHOODS}")
        if self.random_effect not in RANDOM_EFFECTS:
            raise GeometryError(f"random_effect must be one of {RANDOM_EFFECTS}")
        if self.likelihood == "poisson_offset" and self.nugget:
            raise GeometryError("the nugget term applies to the gaussian likelihood only")
        self.priors.validate()
        self.mcmc.validate()

    @property
    def is_hgp(self) -> bool:
        return self.random_effect in HGP_SMOOTHNESS

    @property
    def smoothness(self) -> float:
        if not self.is_hgp:
            raise GeometryError(f"random effect '{self.random_effect}' has no smoothness")
        return HGP_SMOOTHNESS[self.random_effect]


def derive_phi_prior(distances) -> tuple:
    """Practical-range prior bounds from observed pairwise distances.

    Lower bound: smallest positive off-diagonal distance. Upper bound:
    half the largest distance. Raises when the configuration is degenerate
    (no positive distances, or lower >= upper), in which case explicit
    bounds must be supplied.
    """
    if hasattr(distances, "offdiagonal"):
        off = distances.offdiagonal()
    else:
        d = np.asarray(distances, dtype=float)
        off = d[np.triu_indices(d.shape[0], k=1)]
    positive = off[off > 0]
    if len(positive) == 0:
        raise GeometryError("cannot derive a practical-range prior: all distances are zero")
    a = float(positive.min())
    b = float(off.max()) / 2.0
    if a >= b:
        raise GeometryError(
            f"degenerate practical-range prior (lower {a:.6g} >= upper {b:.6g}); "
            "supply explicit phi bounds"
        )
    return (a, b)
