"""Adaptive componentwise random-walk Metropolis fitting.

One engine carries the model state and computes cheap log-posterior
deltas; a chain runner drives proposals, adapts proposal scales toward
the target acceptance rate during burn-in (frozen afterward), records
post-burn-in draws, and stops once the effective sample size of the
log-likelihood trace reaches its per-chain share of the target.

Precision parameters move on the log scale, mixing weights and the
practical range on logit scales. Models with a latent field update it
componentwise with incremental cache updates, so a full sweep costs
O(n^2) rather than O(n^3). The gaussian likelihood is fitted collapsed
(latent field integrated out analytically) unless asked otherwise, in
which case the field is re-sampled per retained draw so reports and
prediction see it either way.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit, gammaln

from ..carmodels import IcarStructure, icar_structure
from ..covariance import JITTER_SCHEDULE, CorrelationModel, chol_with_jitter, correlation_matrix
from ..distances import DistanceMatrix, distance_matrix
from ..errors import NotPositiveDefiniteError, SamplerInitError
from ..geometry import AdjacencyMatrix, GeometrySet, derive_adjacency
from .model import HGP_SMOOTHNESS, McmcSettings, ModelSpec, derive_phi_prior
from .samples import PosteriorSamples, data_fingerprint

ESS_CHECK_INTERVAL = 1000  # post-burn-in iterations between stopping checks
_RESYNC_INTERVAL = 512  # full cache recomputation cadence (drift control)
_LOG2PI = math.log(2.0 * math.pi)


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x


def _softplus(z: float) -> float:
    return math.log1p(math.exp(-abs(z))) + max(z, 0.0)


class _Transform:
    """Bijection between a parameter and the unconstrained proposal scale."""

    def __init__(self, kind: str, lo: float = None, hi: float = None):
        self.kind = kind
        self.lo = lo
        self.hi = hi

    def to_z(self, value: float) -> float:
        if self.kind == "identity":
            return value
        if self.kind == "log":
            return math.log(value)
        u = (value - self.lo) / (self.hi - self.lo)
        u = min(max(u, 1e-12), 1.0 - 1e-12)
        return math.log(u / (1.0 - u))

    def from_z(self, z: float) -> float:
        if self.kind == "identity":
            return z
        if self.kind == "log":
            return math.exp(z)
        return self.lo + (self.hi - self.lo) * float(expit(z))

    def log_jacobian(self, z: float) -> float:
        if self.kind == "identity":
            return 0.0
        if self.kind == "log":
            return z
        return math.log(self.hi - self.lo) - _softplus(z) - _softplus(-z)


# ---------------------------------------------------------------------------
# random-effect structure builders
# ---------------------------------------------------------------------------


class _HgpStructure:
    """Correlation-matrix family over a fixed distance matrix, indexed by phi."""

    hyper_name = "phi"

    def __init__(self, distances: DistanceMatrix, nu: float, bounds: tuple):
        self.distances = distances
        self.nu = nu
        self.bounds = bounds

    def covariance_unit(self, phi: float):
        r = correlation_matrix(CorrelationModel(self.nu, phi), self.distances)
        return r, 0.0

    def precision_unit(self, phi: float):
        r, _ = self.covariance_unit(phi)
        L, jitter = chol_with_jitter(r)
        n = r.shape[0]
        b = cho_solve((L, True), np.eye(n))
        b = 0.5 * (b + b.T)
        logdet_b = -2.0 * float(np.sum(np.log(np.diag(L))))
        return b, logdet_b, jitter


class _Bym2Structure:
    """Mixed identity / scaled-intrinsic family, diagonal in the ICAR basis."""

    def __init__(self, structure: IcarStructure, psi_fixed: float = None):
        self.eigvals = structure.eigvals
        self.eigvecs = structure.eigvecs
        self.psi_fixed = psi_fixed
        self.hyper_name = None if psi_fixed is not None else "psi"
        self.bounds = (0.0, 1.0)

    def _mix(self, psi: float):
        if self.psi_fixed is not None:
            psi = self.psi_fixed
        m = (1.0 - psi) + psi * self.eigvals
        jitter = 0.0
        if m.min() <= 1e-12:
            for j in JITTER_SCHEDULE[1:]:
                if m.min() + j > 1e-13:
                    jitter = j
                    break
            m = m + jitter
        return m, jitter

    def covariance_unit(self, psi: float):
        m, jitter = self._mix(psi)
        return (self.eigvecs * m) @ self.eigvecs.T, jitter

    def precision_unit(self, psi: float):
        m, jitter = self._mix(psi)
        b = (self.eigvecs / m) @ self.eigvecs.T
        b = 0.5 * (b + b.T)
        return b, -float(np.sum(np.log(m))), jitter


class _LerouxStructure:
    """Precision family psi * (D - W) + (1 - psi) * I."""

    hyper_name = "psi"
    bounds = (0.0, 1.0)

    def __init__(self, w: AdjacencyMatrix):
        entries = w.entries
        self.q = np.diag(entries.sum(axis=1)) - entries
        self.eigvals, self.eigvecs = np.linalg.eigh(self.q)
        self.eigvals = np.clip(self.eigvals, 0.0, None)

    def _vals(self, psi: float):
        return psi * self.eigvals + (1.0 - psi)

    def covariance_unit(self, psi: float):
        vals = self._vals(psi)
        if vals.min() <= 0:
            raise SamplerInitError("Leroux precision is singular at psi = 1")
        return (self.eigvecs / vals) @ self.eigvecs.T, 0.0

    def precision_unit(self, psi: float):
        b = psi * self.q + (1.0 - psi) * np.eye(self.q.shape[0])
        vals = self._vals(psi)
        if vals.min() <= 0:
            return b, -math.inf, 0.0
        return b, float(np.sum(np.log(vals))), 0.0


# ---------------------------------------------------------------------------
# model data bundle
# ---------------------------------------------------------------------------


class _ModelData:
    """Aligned response, offset, and design arrays plus prior hyperparameters."""

    def __init__(self, spec: ModelSpec, y, x, offset, beta_names):
        self.spec = spec
        self.y = y
        self.x = x
        self.offset = offset
        self.beta_names = tuple(beta_names)
        self.n = x.shape[0]
        self.prior_only = y is None
        if not self.prior_only and spec.likelihood == "poisson_offset":
            self.log_offset = np.log(offset)
            self.loglik_const = float(
                np.sum(y * self.log_offset) - np.sum(gammaln(y + 1.0))
            )


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


class _EngineBase:
    """Shared scalar-parameter bookkeeping for both engines."""

    def __init__(self, data: _ModelData, structure, fixed: dict):
        self.data = data
        self.structure = structure
        self.fixed = dict(fixed)
        self.spec = data.spec
        self.priors = data.spec.priors
        self.max_jitter = 0.0
        # proposals whose correlation matrix stayed indefinite through the
        # jitter schedule carry zero posterior density and are rejected;
        # the count is reported so positive-definiteness failures stay visible
        self.pd_rejections = 0
        self.transforms = {}
        self.values = {}
        self.param_names = ["alpha"] + [f"beta_{c}" for c in data.beta_names] + ["tau"]
        self.transforms["alpha"] = _Transform("identity")
        for name in self.param_names[1:-1]:
            self.transforms[name] = _Transform("identity")
        self.transforms["tau"] = _Transform("log")
        if structure.hyper_name is not None:
            self.param_names.append(structure.hyper_name)
            lo, hi = structure.bounds
            self.transforms[structure.hyper_name] = _Transform("logit", lo, hi)
        if data.spec.nugget:
            self.param_names.append("tau_nugget")
            self.transforms["tau_nugget"] = _Transform("log")
        self.free_names = tuple(n for n in self.param_names if n not in self.fixed)

    # prior log densities (untransformed scale, additive constants kept)
    def _log_prior(self, name: str, value: float) -> float:
        if name == "alpha":
            return -0.5 * (value / self.priors.alpha_sd) ** 2
        if name.startswith("beta_"):
            return -0.5 * (value / self.priors.beta_sd) ** 2
        if name == "tau":
            return _gamma_logpdf(value, self.priors.tau_shape, self.priors.tau_rate)
        if name == "tau_nugget":
            return _gamma_logpdf(value, self.priors.nugget_shape, self.priors.nugget_rate)
        # phi and psi carry flat priors over their bounds
        lo, hi = self.structure.bounds
        return 0.0 if lo <= value <= hi else -math.inf

    def _default_value(self, name: str) -> float:
        if name == "tau" or name == "tau_nugget":
            return self._init_precision()
        if name == "phi":
            lo, hi = self.structure.bounds
            return 0.5 * (lo + hi)
        if name == "psi":
            return 0.5
        return 0.0

    def _prior_draw(self, name: str, rng: np.random.Generator) -> float:
        if name == "alpha":
            return rng.normal(0.0, self.priors.alpha_sd)
        if name.startswith("beta_"):
            return rng.normal(0.0, self.priors.beta_sd)
        if name == "tau":
            return rng.gamma(self.priors.tau_shape, 1.0 / self.priors.tau_rate)
        if name == "tau_nugget":
            return rng.gamma(self.priors.nugget_shape, 1.0 / self.priors.nugget_rate)
        lo, hi = self.structure.bounds
        return rng.uniform(lo, hi)

    def _init_precision(self) -> float:
        data = self.data
        if data.prior_only:
            return 1.0
        if data.spec.likelihood == "poisson_offset":
            wr = np.log((data.y + 0.5) / data.offset)
        else:
            wr = data.y
        v = float(np.var(wr))
        return 1.0 / v if v > 0 and math.isfinite(v) else 1.0

    def init(self, rng: np.random.Generator):
        """Deterministic start, falling back to prior draws if it is nonfinite."""
        for attempt in range(101):
            for name in self.param_names:
                if name in self.fixed:
                    self.values[name] = float(self.fixed[name])
                elif attempt == 0:
                    self.values[name] = self._default_value(name)
                else:
                    self.values[name] = self._prior_draw(name, rng)
            self._rebuild()
            if math.isfinite(self.log_posterior()):
                return
        raise SamplerInitError(
            "log posterior is nonfinite at initialization after 100 prior redraws"
        )

    def log_posterior(self) -> float:
        lp = self.loglik() + self._latent_log_terms()
        for name in self.param_names:
            lp += self._log_prior(name, self.values[name])
        return lp

    def mh_scalar(self, name: str, step: float, rng: np.random.Generator) -> bool:
        tr = self.transforms[name]
        value = self.values[name]
        z = tr.to_z(value)
        zp = z + step * rng.standard_normal()
        log_u = math.log(rng.uniform())
        vp = tr.from_z(zp)
        with np.errstate(over="ignore", invalid="ignore"):
            delta = (
                self._delta_scalar(name, value, vp)
                + self._log_prior(name, vp)
                - self._log_prior(name, value)
                + tr.log_jacobian(zp)
                - tr.log_jacobian(z)
            )
        if (math.isfinite(delta) and log_u < delta) or delta == math.inf:
            self._commit_scalar(name, vp)
            return True
        return False


class _LatentEngine(_EngineBase):
    """Explicit latent field; poisson-offset or gaussian-plus-nugget likelihood."""

    has_latent = True

    def __init__(self, data: _ModelData, structure, fixed: dict):
        if data.spec.likelihood == "gaussian" and not data.spec.nugget and not data.prior_only:
            raise SamplerInitError(
                "an uncollapsed gaussian fit needs a nugget term; "
                "enable the nugget or use the collapsed sampler"
            )
        super().__init__(data, structure, fixed)
        self.poisson = data.spec.likelihood == "poisson_offset"
        self.n_latent = data.n
        self.s = np.zeros(data.n)
        self._pending = None

    # -- cache management ---------------------------------------------------

    def _rebuild(self):
        hyper = self.values.get(self.structure.hyper_name) if self.structure.hyper_name else None
        self.b, self.logdet_b, jitter = self.structure.precision_unit(
            hyper if hyper is not None else 0.0
        )
        self.max_jitter = max(self.max_jitter, jitter)
        self.eta = self.values["alpha"] + self.data.x @ self._beta() + self.s
        self.v = self.b @ self.s
        self.quad = float(self.s @ self.v)
        self._resync_likelihood()

    def resync(self):
        self.eta = self.values["alpha"] + self.data.x @ self._beta() + self.s
        self.v = self.b @ self.s
        self.quad = float(self.s @ self.v)
        self._resync_likelihood()

    def _beta(self) -> np.ndarray:
        return np.array([self.values[f"beta_{c}"] for c in self.data.beta_names])

    def _resync_likelihood(self):
        if self.data.prior_only:
            return
        if self.poisson:
            self.exp_term = float(np.sum(self.data.offset * np.exp(self.eta)))
            self.lin_term = float(np.sum(self.data.y * self.eta))
        else:
            self.resid = self.data.y - self.eta
            self.rss = float(self.resid @ self.resid)

    # -- likelihood ----------------------------------------------------------

    def loglik(self) -> float:
        if self.data.prior_only:
            return 0.0
        if self.poisson:
            return self.data.loglik_const + self.lin_term - self.exp_term
        tau_eps = self.values["tau_nugget"]
        n = self.data.n
        return 0.5 * n * (math.log(tau_eps) - _LOG2PI) - 0.5 * tau_eps * self.rss

    def pointwise(self) -> np.ndarray:
        if self.data.prior_only:
            return np.zeros(0)
        if self.poisson:
            return (
                self.data.y * (self.data.log_offset + self.eta)
                - self.data.offset * np.exp(self.eta)
                - gammaln(self.data.y + 1.0)
            )
        tau_eps = self.values["tau_nugget"]
        return 0.5 * (math.log(tau_eps) - _LOG2PI) - 0.5 * tau_eps * self.resid**2

    def _latent_log_terms(self) -> float:
        tau = self.values["tau"]
        n = self.data.n
        return 0.5 * (
            n * math.log(tau) + self.logdet_b - tau * self.quad - n * _LOG2PI
        )

    # -- scalar proposals ----------------------------------------------------

    def _delta_scalar(self, name: str, old: float, new: float) -> float:
        self._pending = None
        d = self.data
        if name == "alpha" or name.startswith("beta_"):
            if d.prior_only:
                return 0.0
            delta = new - old
            shift = delta if name == "alpha" else delta * d.x[:, self._beta_index(name)]
            eta_new = self.eta + shift
            if self.poisson:
                exp_new = float(np.sum(d.offset * np.exp(eta_new)))
                lin_new = float(np.sum(d.y * eta_new))
                self._pending = (eta_new, exp_new, lin_new)
                return (lin_new - exp_new) - (self.lin_term - self.exp_term)
            resid_new = d.y - eta_new
            rss_new = float(resid_new @ resid_new)
            self._pending = (eta_new, resid_new, rss_new)
            return -0.5 * self.values["tau_nugget"] * (rss_new - self.rss)
        if name == "tau":
            n = d.n
            return 0.5 * n * (math.log(new) - math.log(old)) - 0.5 * (new - old) * self.quad
        if name == "tau_nugget":
            if d.prior_only:
                return 0.0
            n = d.n
            return 0.5 * n * (math.log(new) - math.log(old)) - 0.5 * (new - old) * self.rss
        # hyper parameter: rebuild the latent structure
        try:
            b_new, logdet_new, jitter = self.structure.precision_unit(new)
        except NotPositiveDefiniteError:
            self.pd_rejections += 1
            return -math.inf
        quad_new = float(self.s @ b_new @ self.s)
        self._pending = (b_new, logdet_new, quad_new, jitter)
        tau = self.values["tau"]
        return 0.5 * (logdet_new - self.logdet_b) - 0.5 * tau * (quad_new - self.quad)

    def _beta_index(self, name: str) -> int:
        return self.data.beta_names.index(name[5:])

    def _commit_scalar(self, name: str, value: float):
        self.values[name] = value
        if name == "alpha" or name.startswith("beta_"):
            if not self.data.prior_only:
                if self.poisson:
                    self.eta, self.exp_term, self.lin_term = self._pending
                else:
                    self.eta, self.resid, self.rss = self._pending
            else:
                self.eta = self.values["alpha"] + self.data.x @ self._beta() + self.s
        elif name == self.structure.hyper_name:
            self.b, self.logdet_b, self.quad, jitter = self._pending
            self.max_jitter = max(self.max_jitter, jitter)
            self.v = self.b @ self.s
        self._pending = None

    # -- latent proposals ----------------------------------------------------

    def mh_latent(self, k: int, step: float, rng: np.random.Generator) -> bool:
        delta = step * rng.standard_normal()
        log_u = math.log(rng.uniform())
        d = self.data
        tau = self.values["tau"]
        dprior = -tau * (delta * self.v[k] + 0.5 * delta * delta * self.b[k, k])
        if d.prior_only:
            dll = 0.0
        elif self.poisson:
            if self.eta[k] + delta > 700.0:  # exp would overflow: zero density
                return False
            exp_old = d.offset[k] * math.exp(self.eta[k])
            exp_new = d.offset[k] * math.exp(self.eta[k] + delta)
            dll = d.y[k] * delta - (exp_new - exp_old)
        else:
            r_new = self.resid[k] - delta
            dll = -0.5 * self.values["tau_nugget"] * (r_new * r_new - self.resid[k] ** 2)
        total = dll + dprior
        if not (math.isfinite(total) and log_u < total):
            return False
        self.quad += 2.0 * delta * self.v[k] + delta * delta * self.b[k, k]
        self.v += delta * self.b[:, k]
        self.s[k] += delta
        self.eta[k] += delta
        if not d.prior_only:
            if self.poisson:
                self.exp_term += exp_new - exp_old
                self.lin_term += d.y[k] * delta
            else:
                self.rss += -2.0 * delta * self.resid[k] + delta * delta
                self.resid[k] -= delta
        return True

    def record(self, rng: np.random.Generator):
        return (
            {name: self.values[name] for name in self.param_names},
            self.s.copy(),
            self.loglik(),
            self.pointwise().copy(),
        )


class _CollapsedGaussianEngine(_EngineBase):
    """Gaussian likelihood with the latent field integrated out analytically.

    The marginal covariance of y is C(hyper)/tau (+ I/tau_nugget). The
    latent field is re-sampled from its conditional per retained draw so
    downstream reports and prediction have draws of it.
    """

    has_latent = False
    n_latent = 0

    def __init__(self, data: _ModelData, structure, fixed: dict):
        if data.prior_only:
            raise SamplerInitError("the collapsed sampler needs observed responses")
        super().__init__(data, structure, fixed)

    def _rebuild(self):
        hyper = self.values.get(self.structure.hyper_name) if self.structure.hyper_name else None
        self.cov_unit, jitter = self.structure.covariance_unit(
            hyper if hyper is not None else 0.0
        )
        self.max_jitter = max(self.max_jitter, jitter)
        self._factor_marginal()
        self._resync_resid()

    def resync(self):
        self._resync_resid()

    def _beta(self) -> np.ndarray:
        return np.array([self.values[f"beta_{c}"] for c in self.data.beta_names])

    def _marginal_cov(self, tau: float, tau_eps: float = None) -> np.ndarray:
        cov = self.cov_unit / tau
        if self.spec.nugget:
            cov = cov + np.eye(self.data.n) / tau_eps
        return cov

    def _factor_marginal(self):
        tau_eps = self.values.get("tau_nugget")
        self.chol, jitter = chol_with_jitter(self._marginal_cov(self.values["tau"], tau_eps))
        self.max_jitter = max(self.max_jitter, jitter)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def _resync_resid(self):
        self.resid = self.data.y - self.values["alpha"] - self.data.x @ self._beta()
        self.white = solve_triangular(self.chol, self.resid, lower=True, check_finite=False)
        self.quad = float(self.white @ self.white)

    def loglik(self) -> float:
        return -0.5 * (self.data.n * _LOG2PI + self.logdet + self.quad)

    def _latent_log_terms(self) -> float:
        return 0.0

    def _delta_scalar(self, name: str, old: float, new: float) -> float:
        self._pending = None
        old_ll = self.loglik()
        if name == "alpha" or name.startswith("beta_"):
            delta = new - old
            shift = delta if name == "alpha" else delta * self.data.x[:, self._beta_index(name)]
            resid_new = self.resid - shift
            white_new = solve_triangular(self.chol, resid_new, lower=True, check_finite=False)
            quad_new = float(white_new @ white_new)
            self._pending = ("resid", resid_new, white_new, quad_new)
            return -0.5 * (quad_new - self.quad)
        values_new = dict(self.values)
        values_new[name] = new
        if name == self.structure.hyper_name:
            cov_unit_new, j0 = self.structure.covariance_unit(new)
        else:
            cov_unit_new, j0 = self.cov_unit, 0.0
        cov = cov_unit_new / values_new["tau"]
        if self.spec.nugget:
            cov = cov + np.eye(self.data.n) / values_new["tau_nugget"]
        try:
            chol_new, j1 = chol_with_jitter(cov)
        except NotPositiveDefiniteError:
            self.pd_rejections += 1
            return -math.inf
        logdet_new = 2.0 * float(np.sum(np.log(np.diag(chol_new))))
        white_new = solve_triangular(chol_new, self.resid, lower=True, check_finite=False)
        quad_new = float(white_new @ white_new)
        self._pending = ("cov", cov_unit_new, chol_new, logdet_new, white_new, quad_new, max(j0, j1))
        new_ll = -0.5 * (self.data.n * _LOG2PI + logdet_new + quad_new)
        return new_ll - old_ll

    def _beta_index(self, name: str) -> int:
        return self.data.beta_names.index(name[5:])

    def _commit_scalar(self, name: str, value: float):
        self.values[name] = value
        kind = self._pending[0]
        if kind == "resid":
            _, self.resid, self.white, self.quad = self._pending
        else:
            _, self.cov_unit, self.chol, self.logdet, self.white, self.quad, jitter = self._pending
            self.max_jitter = max(self.max_jitter, jitter)
        self._pending = None

    def mh_latent(self, k, step, rng):  # pragma: no cover - collapsed engine has no field
        raise AssertionError("collapsed engine has no latent updates")

    def record(self, rng: np.random.Generator):
        tau = self.values["tau"]
        scalars = {name: self.values[name] for name in self.param_names}
        ll = self.loglik()
        if not self.spec.nugget:
            # marginal covariance equals the latent covariance: the field is
            # determined exactly by the residual, and pointwise densities are
            # the per-site marginals
            s = self.resid.copy()
            var_ii = np.diag(self.cov_unit) / tau
            pointwise = -0.5 * (np.log(2.0 * math.pi * var_ii) + self.resid**2 / var_ii)
            return scalars, s, ll, pointwise
        cov_s = self.cov_unit / tau
        w = cho_solve((self.chol, True), self.resid)
        mean = cov_s @ w
        cond = cov_s - cov_s @ cho_solve((self.chol, True), cov_s)
        cond = 0.5 * (cond + cond.T)
        lam, vec = np.linalg.eigh(cond)
        lam = np.clip(lam, 0.0, None)
        s = mean + (vec * np.sqrt(lam)) @ rng.standard_normal(self.data.n)
        tau_eps = self.values["tau_nugget"]
        resid_s = self.resid - s
        pointwise = 0.5 * (math.log(tau_eps) - _LOG2PI) - 0.5 * tau_eps * resid_s**2
        return scalars, s, ll, pointwise


# ---------------------------------------------------------------------------
# chain runner
# ---------------------------------------------------------------------------


class _AdaptiveScales:
    """Per-component proposal scales adapted toward a target rate during burn-in."""

    def __init__(self, names, n_latent: int, target: float):
        self.log_scale = {name: math.log(0.5) for name in names}
        self.latent_log_scale = np.full(n_latent, math.log(0.5))
        self.target = target
        self.accepted = {name: 0 for name in names}
        self.attempted = {name: 0 for name in names}
        self.latent_accepted = np.zeros(n_latent, dtype=int)
        self.latent_attempted = np.zeros(n_latent, dtype=int)
        self.batch = 0

    def scale(self, name: str) -> float:
        return math.exp(self.log_scale[name])

    def latent_scale(self, k: int) -> float:
        return math.exp(self.latent_log_scale[k])

    def tally(self, name: str, accepted: bool):
        self.attempted[name] += 1
        self.accepted[name] += accepted

    def tally_latent(self, k: int, accepted: bool):
        self.latent_attempted[k] += 1
        self.latent_accepted[k] += accepted

    def adapt(self):
        self.batch += 1
        delta = min(0.25, 2.0 / math.sqrt(self.batch))
        for name in self.log_scale:
            if self.attempted[name]:
                rate = self.accepted[name] / self.attempted[name]
                self.log_scale[name] += delta if rate > self.target else -delta
                self.log_scale[name] = min(max(self.log_scale[name], -12.0), 12.0)
            self.accepted[name] = self.attempted[name] = 0
        mask = self.latent_attempted > 0
        if mask.any():
            rate = self.latent_accepted[mask] / self.latent_attempted[mask]
            sign = np.where(rate > self.target, 1.0, -1.0)
            self.latent_log_scale[mask] = np.clip(
                self.latent_log_scale[mask] + delta * sign, -12.0, 12.0
            )
        self.latent_accepted[:] = 0
        self.latent_attempted[:] = 0


def _quick_ess(trace: np.ndarray) -> float:
    import warnings

    from .diagnostics import ess as _ess

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return _ess(trace)
        except ValueError:
            return float(len(trace))


def _run_chain(engine, settings: McmcSettings, chain_index: int, ess_target_chain: float):
    rng = np.random.default_rng(settings.seed + chain_index)
    engine.init(rng)
    scales = _AdaptiveScales(engine.free_names, engine.n_latent, settings.target_acceptance)
    post_acc = {name: 0 for name in engine.free_names}
    post_att = {name: 0 for name in engine.free_names}
    n_burn = settings.n_burn

    recs_scalar, recs_latent, recs_ll, recs_pw, recs_iter = [], [], [], [], []
    stop_iteration = settings.max_iterations
    converged = False

    for t in range(1, settings.max_iterations + 1):
        burned_in = t > n_burn
        for name in engine.free_names:
            accepted = engine.mh_scalar(name, scales.scale(name), rng)
            scales.tally(name, accepted)
            if burned_in:
                post_att[name] += 1
                post_acc[name] += accepted
        if engine.has_latent:
            for k in range(engine.n_latent):
                accepted = engine.mh_latent(k, scales.latent_scale(k), rng)
                scales.tally_latent(k, accepted)
        if t % _RESYNC_INTERVAL == 0:
            engine.resync()
        if not burned_in:
            if t % settings.adapt_interval == 0:
                scales.adapt()
            continue
        t_post = t - n_burn
        if t_post % settings.thin == 0:
            scalars, s, ll, pw = engine.record(rng)
            recs_scalar.append(scalars)
            recs_latent.append(s)
            recs_ll.append(ll)
            recs_pw.append(pw)
            recs_iter.append(t)
        if t_post % ESS_CHECK_INTERVAL == 0 and len(recs_ll) >= 50:
            if _quick_ess(np.asarray(recs_ll)) >= ess_target_chain:
                stop_iteration = t
                converged = True
                break

    params = {
        name: np.array([r[name] for r in recs_scalar]) for name in engine.param_names
    }
    acceptance = {
        name: (post_acc[name] / post_att[name]) if post_att[name] else math.nan
        for name in engine.free_names
    }
    return {
        "params": params,
        "latent": np.array(recs_latent),
        "loglik": np.array(recs_ll),
        "pointwise": np.array(recs_pw),
        "iterations": np.array(recs_iter, dtype=int),
        "acceptance": acceptance,
        "stop_iteration": stop_iteration,
        "converged": converged,
        "max_jitter": engine.max_jitter,
        "pd_rejections": engine.pd_rejections,
    }


# ---------------------------------------------------------------------------
# public entry point
# ---------------------------------------------------------------------------


def _align_table(gs: GeometrySet, table):
    if table is None:
        return None
    if "site_id" in table.columns:
        indexed = table.set_index(table["site_id"].astype(str))
        missing = [sid for sid in gs.ids if sid not in indexed.index]
        if missing:
            raise SamplerInitError(f"table is missing rows for sites: {missing[:5]}")
        return indexed.loc[list(gs.ids)].reset_index(drop=True)
    if len(table) != len(gs):
        raise SamplerInitError(
            f"table has {len(table)} rows but the geometry has {len(gs)} sites"
        )
    return table.reset_index(drop=True)


def _extract_data(spec: ModelSpec, gs: GeometrySet, table) -> _ModelData:
    aligned = _align_table(gs, table)
    y = offset = None
    if spec.response is not None:
        if aligned is None or spec.response not in aligned.columns:
            raise SamplerInitError(f"response column '{spec.response}' not found")
        y = aligned[spec.response].to_numpy(dtype=float)
        if not np.all(np.isfinite(y)):
            raise SamplerInitError("response contains nonfinite values")
        if spec.likelihood == "poisson_offset":
            if spec.offset is None or spec.offset not in aligned.columns:
                raise SamplerInitError(f"offset column '{spec.offset}' not found")
            offset = aligned[spec.offset].to_numpy(dtype=float)
            bad = np.nonzero(~(offset > 0))[0]
            if len(bad):
                raise SamplerInitError(
                    f"offset must be strictly positive; site '{gs.ids[bad[0]]}' has "
                    f"offset {offset[bad[0]]!r}"
                )
    x_cols = []
    for c in spec.covariates:
        if aligned is None or c not in aligned.columns:
            raise SamplerInitError(f"covariate column '{c}' not found")
        col = aligned[c].to_numpy(dtype=float)
        if not np.all(np.isfinite(col)):
            raise SamplerInitError(f"covariate column '{c}' contains nonfinite values")
        x_cols.append(col)
    x = np.column_stack(x_cols) if x_cols else np.zeros((len(gs), 0))
    return _ModelData(spec, y, x, offset, spec.covariates)


def build_structure(
    spec: ModelSpec,
    gs: GeometrySet,
    distances: DistanceMatrix = None,
    adjacency: AdjacencyMatrix = None,
    threads: int = 1,
):
    """Random-effect structure plus the inputs it was derived from."""
    if spec.is_hgp:
        if distances is None:
            distances = distance_matrix(gs, kind="hausdorff", threads=threads)
        bounds = spec.priors.phi_bounds or derive_phi_prior(distances)
        return _HgpStructure(distances, HGP_SMOOTHNESS[spec.random_effect], bounds), distances, None
    if adjacency is None:
        adjacency = derive_adjacency(gs)
    if spec.random_effect == "leroux":
        return _LerouxStructure(adjacency), None, adjacency
    icar = icar_structure(adjacency)
    psi_fixed = 1.0 if spec.random_effect == "icar" else None
    return _Bym2Structure(icar, psi_fixed=psi_fixed), None, adjacency


def _make_engine(spec: ModelSpec, data: _ModelData, structure):
    if spec.likelihood == "gaussian" and spec.mcmc.collapse_gaussian and not data.prior_only:
        return _CollapsedGaussianEngine(data, structure, spec.mcmc.fixed)
    return _LatentEngine(data, structure, spec.mcmc.fixed)


def fit(
    spec: ModelSpec,
    gs: GeometrySet,
    table=None,
    distances: DistanceMatrix = None,
    adjacency: AdjacencyMatrix = None,
    threads: int = 1,
) -> PosteriorSamples:
    """Fit the model by adaptive Metropolis MCMC; deterministic given the seed.

    `distances` (for the set-distance random effects) and `adjacency` (for
    the neighbor-based ones) are derived from the geometry when not given.
    Chains use generators seeded seed + chain_index and can be reproduced
    individually.
    """
    data = _extract_data(spec, gs, table)
    structure, used_distances, used_adjacency = build_structure(
        spec, gs, distances, adjacency, threads
    )
    settings = spec.mcmc
    ess_target_chain = settings.ess_target / settings.n_chains

    chains = []
    for c in range(settings.n_chains):
        engine = _make_engine(spec, data, structure)
        chains.append(_run_chain(engine, settings, c, ess_target_chain))

    param_names = tuple(chains[0]["params"].keys())
    meta = {
        "likelihood": spec.likelihood,
        "random_effect": spec.random_effect,
        "nugget": spec.nugget,
        "n_sites": len(gs),
        "seed": settings.seed,
    }
    if spec.is_hgp:
        meta["nu"] = HGP_SMOOTHNESS[spec.random_effect]
        meta["phi_bounds"] = structure.bounds
        meta["distance_kind"] = used_distances.kind if used_distances is not None else "hausdorff"
        meta["densify"] = used_distances.densify if used_distances is not None else 0.0
    return PosteriorSamples(
        param_names=param_names,
        params={name: tuple(ch["params"][name] for ch in chains) for name in param_names},
        latent=tuple(ch["latent"] for ch in chains),
        pointwise=tuple(ch["pointwise"] for ch in chains),
        loglik=tuple(ch["loglik"] for ch in chains),
        iterations=tuple(ch["iterations"] for ch in chains),
        site_ids=gs.ids,
        model_label=spec.random_effect,
        data_fingerprint=data_fingerprint(gs.ids, data.y, data.offset),
        acceptance={
            name: tuple(ch["acceptance"].get(name, math.nan) for ch in chains)
            for name in chains[0]["acceptance"]
        },
        max_jitter=max(ch["max_jitter"] for ch in chains),
        stop_iterations=tuple(ch["stop_iteration"] for ch in chains),
        converged=tuple(ch["converged"] for ch in chains),
        meta={**meta, "pd_rejections": tuple(ch["pd_rejections"] for ch in chains)},
    )
