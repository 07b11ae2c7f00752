"""Adjacency-based random-effect structures used as comparison baselines.

Three constructions over a binary neighbor matrix W:

* the intrinsic autoregression precision Q = D - W, rescaled so that the
  marginal variances implied by its generalized inverse have geometric
  mean one (which makes the precision parameter interpretable as a
  marginal precision);
* the mixed marginal covariance tau^-1 ((1 - psi) I + psi Qstar_ginv);
* the Leroux joint precision tau_l (psi (D - W) + (1 - psi) I).

Disconnected graphs are handled by zeroing the per-component constant
directions of the generalized inverse; the rescaling constant pools the
marginal variances of all components geometrically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import GeometryError
from .geometry import AdjacencyMatrix

_NULLSPACE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class IcarStructure:
    """Scaled intrinsic-autoregression precision and its generalized inverse.

    qstar_ginv's eigendecomposition (eigvals, eigvecs) is kept because the
    samplers repeatedly need (1 - psi) I + psi * qstar_ginv inverted for
    varying psi, which is diagonal in that basis.
    """

    q: np.ndarray
    scale: float
    qstar: np.ndarray
    qstar_ginv: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    n_components: int

    @property
    def n(self) -> int:
        return self.q.shape[0]


def icar_structure(w: AdjacencyMatrix) -> IcarStructure:
    """Build the scaled intrinsic-autoregression structure from adjacency."""
    entries = w.entries
    degrees = entries.sum(axis=1)
    if np.any(degrees == 0):
        idx = int(np.argmin(degrees))
        name = w.site_ids[idx] if w.site_ids else str(idx)
        raise GeometryError(
            f"site '{name}' has no neighbors; its conditional distribution is undefined"
        )
    n_components = connected_components(entries, directed=False)[0]
    q = np.diag(degrees) - entries

    lam, vec = np.linalg.eigh(q)
    # the null space has one constant direction per connected component
    null = np.zeros(len(lam), dtype=bool)
    null[:n_components] = True
    if lam[n_components - 1] > _NULLSPACE_RTOL * lam[-1] or (
        len(lam) > n_components and lam[n_components] <= _NULLSPACE_RTOL * lam[-1]
    ):
        raise GeometryError("eigenvalue gap does not match the component count")
    inv_lam = np.where(null, 0.0, 1.0 / np.where(null, 1.0, lam))
    ginv = (vec * inv_lam) @ vec.T
    ginv = 0.5 * (ginv + ginv.T)

    scale = float(np.exp(np.mean(np.log(np.diag(ginv)))))
    qstar = scale * q
    qstar_ginv = ginv / scale
    gl, gv = np.linalg.eigh(qstar_ginv)
    gl = np.clip(gl, 0.0, None)
    return IcarStructure(
        q=q,
        scale=scale,
        qstar=qstar,
        qstar_ginv=qstar_ginv,
        eigvals=gl,
        eigvecs=gv,
        n_components=int(n_components),
    )


def bym2_covariance(structure: IcarStructure, psi: float, tau: float) -> np.ndarray:
    """Marginal covariance tau^-1 ((1 - psi) I + psi Qstar_ginv)."""
    if not 0.0 <= psi <= 1.0:
        raise GeometryError("mixing parameter psi must lie in [0, 1]")
    if not tau > 0:
        raise GeometryError("precision tau must be positive")
    n = structure.n
    return ((1.0 - psi) * np.eye(n) + psi * structure.qstar_ginv) / tau


def leroux_precision(w: AdjacencyMatrix, psi: float, tau_l: float) -> np.ndarray:
    """Joint precision tau_l (psi (D - W) + (1 - psi) I).

    At psi = 1 this is the unscaled intrinsic precision and is singular; it
    is then only usable inside samplers that constrain the null space.
    """
    if not 0.0 <= psi <= 1.0:
        raise GeometryError("mixing parameter psi must lie in [0, 1]")
    if not tau_l > 0:
        raise GeometryError("precision tau_l must be positive")
    entries = w.entries
    q = np.diag(entries.sum(axis=1)) - entries
    return tau_l * (psi * q + (1.0 - psi) * np.eye(w.n))
