"""Finite-prefix sample paths and i.i.d. draws with reproducible seeding.

Categorical draws use inverse-CDF sampling over left-closed intervals
``[cdf[j-1], cdf[j])``: a uniform that lands exactly on a boundary selects the
higher index.  Cumulative sums that fall short of 1 through rounding are
absorbed by the last positive-probability entry, so zero-probability states
are never produced.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .markov import StochasticMatrix, as_stochastic, validate_stochastic_vec
from .rng import STREAM_IID_FIRST, STREAM_IID_SECOND, STREAM_PATH, Stream, parse_seed, rng_stream

__all__ = [
    "PathSpec", "SamplePath", "categorical_cdf", "sample_path", "sample_iid_pairs",
    "sample_iid", "sample_iid_triples", "rng_stream", "write_path_csv",
]


def categorical_cdf(probs) -> np.ndarray:
    """Row-wise cumulative sums with the sentinel 2.0 from the last positive entry on."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    cdf = np.cumsum(p, axis=1)
    for i, row in enumerate(p):
        last = np.flatnonzero(row > 0.0)[-1]
        cdf[i, last:] = 2.0
    return cdf


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # number of boundaries <= u, i.e. first j with u < cdf[j]
    return (cdf_rows <= u[:, None]).sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class PathSpec:
    kernel: StochasticMatrix
    init: np.ndarray
    horizon: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "kernel", as_stochastic(self.kernel))
        init = validate_stochastic_vec(self.init, tol=1e-9)
        if init.size != self.kernel.n:
            raise ValueError("kernel and init dimensions disagree")
        object.__setattr__(self, "init", init)
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        object.__setattr__(self, "seed", parse_seed(self.seed))


@dataclass(frozen=True)
class SamplePath:
    states: np.ndarray
    seed: int


def sample_path(spec: PathSpec, stream: Stream | None = None) -> SamplePath:
    """Draw states[0..horizon]; one uniform per state from stream ``STREAM_PATH`` of the seed."""
    if stream is None:
        stream = rng_stream(spec.seed, STREAM_PATH)
    u = stream.uniforms(spec.horizon + 1)
    states = kernels.sample_path(categorical_cdf(spec.kernel.rows), categorical_cdf(spec.init)[0], u)
    return SamplePath(states, spec.seed)


def sample_iid(law, count: int, seed, stream_index: int = STREAM_IID_FIRST) -> np.ndarray:
    """``count`` independent indices from a single probability vector."""
    law = validate_stochastic_vec(law, tol=1e-9)
    u = rng_stream(seed, stream_index).uniforms(count)
    return _draw(categorical_cdf(law)[np.zeros(count, dtype=np.int64)], u) if count else np.zeros(0, np.int64)


def sample_iid_pairs(d_pi, P_pi, count: int, seed) -> np.ndarray:
    """Independent pairs (s, s'): s ~ d_pi, s' ~ P_pi[s].  Returns an int array of shape (count, 2)."""
    P = as_stochastic(P_pi)
    d = validate_stochastic_vec(d_pi, tol=1e-9)
    if d.size != P.n:
        raise ValueError("d_pi and P_pi dimensions disagree")
    first = sample_iid(d, count, seed, STREAM_IID_FIRST)
    u2 = rng_stream(seed, STREAM_IID_SECOND).uniforms(count)
    second = _draw(categorical_cdf(P.rows)[first], u2) if count else np.zeros(0, np.int64)
    return np.stack([first, second], axis=1)


def sample_iid_triples(sa_law, transition, count: int, seed) -> np.ndarray:
    """Independent triples as flat indices (s * A + a) * S + s': (s, a) ~ sa_law, s' ~ transition[s, a]."""
    p = np.asarray(transition, dtype=float)
    nS, nA = p.shape[0], p.shape[1]
    law = np.asarray(sa_law, dtype=float).ravel()
    if law.size != nS * nA:
        raise ValueError("sa_law and transition dimensions disagree")
    first = sample_iid(law, count, seed, STREAM_IID_FIRST)
    u2 = rng_stream(seed, STREAM_IID_SECOND).uniforms(count)
    rows = categorical_cdf(p.reshape(nS * nA, nS))
    second = _draw(rows[first], u2) if count else np.zeros(0, np.int64)
    return first * nS + second


def write_path_csv(path: SamplePath, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "state"])
    for t, s in enumerate(path.states.tolist()):
        w.writerow([t, s])
