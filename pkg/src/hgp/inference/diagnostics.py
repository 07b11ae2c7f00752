"""Posterior summaries: WAIC, highest-density intervals, effective sample size."""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from ..errors import ComparisonMismatchError
from .samples import PosteriorSamples


class WaicResult(NamedTuple):
    waic: float
    lppd: float
    p_waic: float


def waic(ps) -> WaicResult:
    """Widely applicable information criterion from pointwise log densities.

    lppd sums the log of the draw-averaged pointwise densities; the
    effective-parameter penalty sums the across-draw variances of the
    pointwise log densities; waic = -2 (lppd - p_waic).
    """
    pointwise = ps.pooled_pointwise() if isinstance(ps, PosteriorSamples) else np.asarray(ps, float)
    if pointwise.ndim != 2:
        raise ValueError("pointwise log densities must be a (draws, observations) array")
    n_draws = pointwise.shape[0]
    if n_draws < 2:
        raise ValueError("WAIC needs at least 2 draws")
    lppd = float(np.sum(logsumexp(pointwise, axis=0) - math.log(n_draws)))
    p_waic = float(np.sum(np.var(pointwise, axis=0, ddof=1)))
    return WaicResult(waic=-2.0 * (lppd - p_waic), lppd=lppd, p_waic=p_waic)


def hpd(samples, level: float = 0.95) -> tuple:
    """Shortest contiguous interval holding ceil(level * n) sorted samples.

    Assumes unimodality; a warning is issued when the interval excludes
    the sample median (a multimodality symptom).
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 20:
        raise ValueError(f"need at least 20 samples for an HPD interval, got {n}")
    m = math.ceil(level * n)
    widths = x[m - 1 :] - x[: n - m + 1]
    i = int(np.argmin(widths))
    lo, hi = float(x[i]), float(x[i + m - 1])
    med = float(np.median(x))
    if not lo <= med <= hi:
        warnings.warn("HPD interval excludes the sample median; the trace may be multimodal")
    return lo, hi


def ess(trace) -> float:
    """Effective sample size n / (1 + 2 sum of autocorrelations).

    The autocorrelation sum is truncated by the initial monotone positive
    sequence of lag-pair sums. A constant trace counts as fully
    independent (ESS = n). Antithetic traces can exceed n; the uncapped
    value is returned with a warning.
    """
    x = np.asarray(trace, dtype=float)
    n = len(x)
    if n < 50:
        raise ValueError(f"need at least 50 draws to estimate ESS, got {n}")
    x = x - x.mean()
    var0 = float(np.dot(x, x)) / n
    if var0 == 0.0:
        return float(n)
    # autocovariance via FFT, biased normalization (divide by n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    rho_k = acov / acov[0]

    n_pairs = n // 2
    gamma = rho_k[0 : 2 * n_pairs : 2] + rho_k[1 : 2 * n_pairs : 2]
    positive = np.nonzero(gamma <= 0)[0]
    cutoff = int(positive[0]) if len(positive) else n_pairs
    gamma = np.minimum.accumulate(gamma[:cutoff]) if cutoff else gamma[:0]
    # antithetic traces can drive the sum to -1; floor the autocorrelation
    # time so superefficiency stays finite (at most n * log10(n))
    tau = max(2.0 * float(gamma.sum()) - 1.0, 1.0 / math.log10(max(n, 10)))
    out = n / tau
    if out > n:
        warnings.warn(
            f"negative autocorrelation: effective sample size {out:.1f} exceeds "
            f"the {n} draws; reporting the uncapped value"
        )
    return float(out)


def _ess_chains(chains) -> float:
    """Sum of per-chain ESS, tolerating chains too short to estimate."""
    total = 0.0
    for trace in chains:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                total += ess(trace)
        except ValueError:
            total += len(trace)
    return total


def summary(ps: PosteriorSamples, level: float = 0.95, include_latent: bool = True) -> pd.DataFrame:
    """Posterior mean, HPD bounds, and ESS for every parameter."""
    rows = []

    def add(name, pooled, chains):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lo, hi = hpd(pooled, level) if len(pooled) >= 20 else (float("nan"), float("nan"))
        rows.append(
            {
                "parameter": name,
                "mean": float(np.mean(pooled)),
                "hpd_lo": lo,
                "hpd_hi": hi,
                "ess": _ess_chains(chains),
            }
        )

    for name in ps.param_names:
        add(name, ps.pooled(name), ps.params[name])
    if include_latent and ps.latent and ps.latent[0].shape[1]:
        pooled_latent = ps.pooled_latent()
        for j, sid in enumerate(ps.site_ids):
            add(f"s_{sid}", pooled_latent[:, j], [lat[:, j] for lat in ps.latent])
    return pd.DataFrame(rows)


def compare(fits, labels=None) -> pd.DataFrame:
    """Rank fitted models by WAIC, lowest (best) first.

    All fits must share the same response data; fingerprints are checked.
    Ties are broken by model label for a stable order.
    """
    if labels is None:
        labels = [ps.model_label for ps in fits]
    if len(labels) != len(fits):
        raise ValueError("labels and fits must have equal length")
    prints = {ps.data_fingerprint for ps in fits}
    if len(prints) > 1:
        raise ComparisonMismatchError(
            "models were fitted to different response data; refusing to compare"
        )
    rows = []
    for label, ps in zip(labels, fits):
        w = waic(ps)
        rows.append({"model_label": label, "waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic})
    frame = pd.DataFrame(rows)
    return frame.sort_values(["waic", "model_label"], kind="stable", ignore_index=True)
