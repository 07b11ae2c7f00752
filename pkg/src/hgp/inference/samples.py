"""Posterior draw container and the CSV report formats.

Chains may stop at different iterations (the effective-sample-size rule is
evaluated per chain), so draws are stored as per-chain arrays rather than
one rectangular block. All CSV output uses LF line endings and 17
significant digits, which round-trips doubles exactly.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..errors import ParseError


def data_fingerprint(site_ids, response, offset=None) -> str:
    """Stable hash identifying the response data a model was fitted to."""
    h = hashlib.sha256()
    for sid in site_ids:
        h.update(str(sid).encode())
        h.update(b"\x00")
    if response is None:
        h.update(b"<prior-only>")
    else:
        h.update(np.ascontiguousarray(np.asarray(response, dtype=float)).tobytes())
    if offset is not None:
        h.update(np.ascontiguousarray(np.asarray(offset, dtype=float)).tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class PosteriorSamples:
    """Per-chain posterior draws plus the ledgers the reports need.

    params maps each scalar parameter name to a tuple of per-chain 1-D
    arrays; latent and pointwise hold per-chain (draws, n) arrays. The
    pointwise log densities feed WAIC; the loglik trace drives the
    stopping rule and is reported per draw.
    """

    param_names: tuple
    params: dict
    latent: tuple
    pointwise: tuple
    loglik: tuple
    iterations: tuple
    site_ids: tuple
    model_label: str
    data_fingerprint: str
    acceptance: dict = field(default_factory=dict)
    max_jitter: float = 0.0
    stop_iterations: tuple = ()
    converged: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.loglik)

    @property
    def n_draws(self) -> int:
        return int(sum(len(x) for x in self.loglik))

    def pooled(self, name: str) -> np.ndarray:
        return np.concatenate(self.params[name])

    def pooled_latent(self) -> np.ndarray:
        return np.concatenate(self.latent, axis=0)

    def pooled_pointwise(self) -> np.ndarray:
        return np.concatenate(self.pointwise, axis=0)

    def pooled_loglik(self) -> np.ndarray:
        return np.concatenate(self.loglik)

    def to_frame(self) -> pd.DataFrame:
        """One row per retained draw: chain, iter, scalars, latents, loglik."""
        frames = []
        for c in range(self.n_chains):
            cols = {"chain": np.full(len(self.loglik[c]), c, dtype=int), "iter": self.iterations[c]}
            for name in self.param_names:
                cols[name] = self.params[name][c]
            for j, sid in enumerate(self.site_ids):
                cols[f"s_{sid}"] = self.latent[c][:, j]
            cols["loglik"] = self.loglik[c]
            frames.append(pd.DataFrame(cols))
        return pd.concat(frames, ignore_index=True)


def _write_csv(frame: pd.DataFrame, path, metadata: dict = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if metadata:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in metadata.items()) + "\n")
        fh.write(",".join(frame.columns) + "\n")
        for row in frame.itertuples(index=False):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.17g}"
    return str(v)


def write_draws_csv(ps: PosteriorSamples, path) -> None:
    _write_csv(ps.to_frame(), path, metadata={"fingerprint": ps.data_fingerprint, "model": ps.model_label})


def read_draws_csv(path):
    """Read a draws CSV back into (frame, metadata dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ParseError(f"{path}: missing metadata line")
        meta = dict(item.split("=", 1) for item in first[1:].split())
        frame = pd.read_csv(fh, float_precision="round_trip")
    return frame, meta


def posterior_from_frame(frame: pd.DataFrame, meta: dict) -> PosteriorSamples:
    """Rebuild a PosteriorSamples from a draws CSV frame (per-chain split)."""
    site_cols = [c for c in frame.columns if c.startswith("s_")]
    scalar_cols = [
        c for c in frame.columns if c not in ("chain", "iter", "loglik") and c not in site_cols
    ]
    chains = sorted(frame["chain"].unique())
    params = {name: [] for name in scalar_cols}
    latent, loglik, iters = [], [], []
    for c in chains:
        sub = frame[frame["chain"] == c]
        for name in scalar_cols:
            params[name].append(sub[name].to_numpy())
        latent.append(sub[site_cols].to_numpy())
        loglik.append(sub["loglik"].to_numpy())
        iters.append(sub["iter"].to_numpy())
    return PosteriorSamples(
        param_names=tuple(scalar_cols),
        params={k: tuple(v) for k, v in params.items()},
        latent=tuple(latent),
        pointwise=tuple(np.zeros((len(x), 0)) for x in loglik),
        loglik=tuple(loglik),
        iterations=tuple(iters),
        site_ids=tuple(c[2:] for c in site_cols),
        model_label=meta.get("model", "unknown"),
        data_fingerprint=meta.get("fingerprint", ""),
    )


def write_summary_csv(frame: pd.DataFrame, path) -> None:
    _write_csv(frame, path)


def write_waic_csv(frame: pd.DataFrame, path, fingerprint: str) -> None:
    _write_csv(frame, path, metadata={"fingerprint": fingerprint})


def read_waic_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ParseError(f"{path}: missing metadata line")
        meta = dict(item.split("=", 1) for item in first[1:].split())
        frame = pd.read_csv(fh, float_precision="round_trip")
    return frame, meta
