"""Finite row-stochastic matrices: structure, Doeblin minorization, stationarity, mixing.

Structural questions (irreducibility, aperiodicity, primitivity index) are
answered on the support digraph, never through floating-point powers.  Entries
at or below ``SUPPORT_THRESHOLD`` count as structural zeros.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import EnvelopeViolated, NegativeEntry, NoConvergence, NotErgodic, RowSumMismatch

SUPPORT_THRESHOLD = 1e-15
VEC_TOL = 1e-12
CERT_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Validated square row-stochastic matrix; ``rows[i]`` is the law of the next state from ``i``."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.rows if dtype is None else self.rows.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, StochasticMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())

    def support(self) -> np.ndarray:
        return self.rows > SUPPORT_THRESHOLD


def validate_stochastic_vec(x, tol: float = VEC_TOL) -> np.ndarray:
    """Check nonnegativity and unit sum of a probability vector; returns a float copy."""
    x = np.array(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("probability vector must be 1-d and nonempty")
    if np.any(x < -tol):
        raise NegativeEntry(f"entry {int(np.argmin(x))} is {x.min()!r}")
    x = np.clip(x, 0.0, None)
    s = x.sum()
    if abs(s - 1.0) > tol:
        raise RowSumMismatch(f"vector sums to {s!r}")
    return x / s


def validate_stochastic(M, tol: float = 1e-9) -> StochasticMatrix:
    """Validate ``M`` as a row-stochastic matrix.

    Entries in ``[-tol, 0)`` are clipped to zero and rows are renormalized,
    which only ever happens when a row is already within ``tol`` of summing to 1.
    """
    if isinstance(M, StochasticMatrix):
        return M
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError(f"expected a nonempty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    bad = np.argwhere(M < -tol)
    if bad.size:
        i, j = bad[0]
        raise NegativeEntry(f"entry ({i}, {j}) is {M[i, j]!r}")
    M = np.clip(M, 0.0, None)
    sums = M.sum(axis=1)
    off = np.abs(sums - 1.0)
    if np.any(off > tol):
        i = int(np.argmax(off))
        raise RowSumMismatch(f"row {i} sums to {sums[i]!r}")
    return StochasticMatrix(M / sums[:, None])


def as_stochastic(P) -> StochasticMatrix:
    return P if isinstance(P, StochasticMatrix) else validate_stochastic(P)


def _support_graph(P: StochasticMatrix) -> csr_matrix:
    return csr_matrix(P.support().astype(np.int8))


def is_irreducible(P) -> bool:
    P = as_stochastic(P)
    ncomp, _ = connected_components(_support_graph(P), directed=True, connection="strong")
    return ncomp == 1


def state_periods(P) -> np.ndarray:
    """Period of every state on the support digraph; 0 marks a state with no return path."""
    P = as_stochastic(P)
    support = P.support()
    ncomp, labels = connected_components(_support_graph(P), directed=True, connection="strong")
    periods = np.zeros(P.n, dtype=np.int64)
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        sub = support[np.ix_(members, members)]
        if not sub.any():
            continue
        order, pred = breadth_first_order(csr_matrix(sub.astype(np.int8)), 0, directed=True)
        level = np.full(members.size, -1, dtype=np.int64)
        level[0] = 0
        for v in order[1:]:
            level[v] = level[pred[v]] + 1
        us, vs = np.nonzero(sub)
        g = reduce(math.gcd, (int(x) for x in np.abs(level[us] + 1 - level[vs])), 0)
        periods[members] = g
    return periods


def is_aperiodic(P) -> bool:
    return bool(np.all(state_periods(P) == 1))


def is_ergodic(P) -> bool:
    return is_irreducible(P) and is_aperiodic(P)


def closed_class(P) -> np.ndarray:
    """Indices of the unique closed communicating class; NotErgodic if there are several."""
    P = as_stochastic(P)
    ncomp, labels = connected_components(_support_graph(P), directed=True, connection="strong")
    support = P.support()
    closed = []
    for c in range(ncomp):
        inside = labels == c
        if not support[inside][:, ~inside].any():
            closed.append(np.flatnonzero(inside))
    if len(closed) != 1:
        raise NotErgodic(f"chain has {len(closed)} closed classes")
    return closed[0]


@dataclass(frozen=True, eq=False)
class DoeblinCertificate:
    power_N: int
    epsilon: float
    minorizing_measure: np.ndarray
    checked_at_tolerance: float = CERT_SLACK

    def as_dict(self) -> dict:
        return {
            "power_N": self.power_N,
            "epsilon": self.epsilon,
            "nu": self.minorizing_measure.tolist(),
            "checked_at_tolerance": self.checked_at_tolerance,
        }


def wielandt_bound(n: int) -> int:
    return (n - 1) ** 2 + 1


def primitivity_index(P) -> int | None:
    """Smallest N within the Wielandt bound with every entry of P^N structurally positive."""
    P = as_stochastic(P)
    A = P.support().astype(np.int64)
    B = A.copy()
    for N in range(1, wielandt_bound(P.n) + 1):
        if B.all():
            return N
        B = np.minimum(B @ A, 1)
    return None


def doeblin_certificate(P) -> DoeblinCertificate | None:
    """Minorization ``(P^N)[i, j] >= eps * nu[j]`` with ``nu`` the normalized column minima.

    Returns None when no power up to the Wielandt bound is strictly positive,
    which is the correct answer for reducible or periodic chains.
    """
    P = as_stochastic(P)
    N = primitivity_index(P)
    if N is None:
        return None
    Q = np.linalg.matrix_power(P.rows, N)
    col_min = Q.min(axis=0)
    eps = float(col_min.sum())
    if eps <= 0.0:
        return None
    nu = col_min / eps
    if eps >= 1.0:
        eps *= 1.0 - 1e-12
    nu.setflags(write=False)
    cert = DoeblinCertificate(N, eps, nu)
    if np.any(Q < eps * nu[None, :] - CERT_SLACK):
        raise EnvelopeViolated("constructed Doeblin certificate does not minorize P^N")
    return cert


def contraction_factor(cert: DoeblinCertificate) -> float:
    """Lipschitz constant of mu -> mu P^N on the simplex in l1."""
    return 1.0 - cert.epsilon


def stationary_oracle(P) -> np.ndarray:
    """Solve mu (P - I) = 0, sum(mu) = 1 directly (replace one balance equation)."""
    P = as_stochastic(P)
    n = P.n
    A = (P.rows - np.eye(n)).T
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    mu = np.linalg.solve(A, rhs)
    return mu / mu.sum()


def _require_ergodic(P: StochasticMatrix) -> DoeblinCertificate:
    if not is_irreducible(P):
        raise NotErgodic("chain is not irreducible")
    if not is_aperiodic(P):
        raise NotErgodic("chain is not aperiodic")
    cert = doeblin_certificate(P)
    if cert is None:  # pragma: no cover - ergodic chains are primitive
        raise NotErgodic("no Doeblin power found within the Wielandt bound")
    return cert


def stationary_distribution(P, tol: float = 1e-12, start=None, max_iter: int = 1_000_000,
                            oracle_tol: float = 1e-6) -> np.ndarray:
    """Stationary law by fixed-point iteration ``mu <- mu P^N`` through the Doeblin power.

    Stops once ``||mu P - mu||_1 <= tol``.  The answer is cross-checked against
    :func:`stationary_oracle`; disagreement beyond ``oracle_tol`` raises
    NoConvergence because it means the requested ``tol`` is meaningless for
    this conditioning.
    """
    P = as_stochastic(P)
    cert = _require_ergodic(P)
    Q = np.linalg.matrix_power(P.rows, cert.power_N)
    mu = np.full(P.n, 1.0 / P.n) if start is None else validate_stochastic_vec(start, tol=1e-9)
    for _ in range(max_iter):
        if np.abs(mu @ P.rows - mu).sum() <= tol:
            break
        mu = mu @ Q
        mu = mu / mu.sum()
    else:
        raise NoConvergence(f"residual above {tol} after {max_iter} iterations")
    if np.abs(mu - stationary_oracle(P)).sum() > oracle_tol:
        raise NoConvergence("iteration disagrees with the linear-solve oracle")
    return mu


def unichain_stationary(P, tol: float = 1e-12) -> np.ndarray:
    """Stationary law of a chain with a single closed class (zero mass off that class)."""
    P = as_stochastic(P)
    idx = closed_class(P)
    sub = P.rows[np.ix_(idx, idx)]
    mu = np.zeros(P.n)
    mu[idx] = stationary_distribution(validate_stochastic(sub), tol=tol)
    return mu


@dataclass(frozen=True)
class MixingCertificate:
    prefactor_C: float
    rate_rho: float
    horizon_checked: int
    max_slack_used: float = field(default=0.0, compare=False)


def mixing_distances(P, mu, horizon: int) -> np.ndarray:
    """``max_s ||delta_s P^t - mu||_1`` for t = 0..horizon."""
    P = as_stochastic(P)
    M = np.eye(P.n)
    out = np.empty(horizon + 1)
    for t in range(horizon + 1):
        out[t] = np.abs(M - mu[None, :]).sum(axis=1).max()
        M = M @ P.rows
    return out


def mixing_certificate(P, horizon: int = 100, mu=None, slack: float = 1e-12) -> MixingCertificate:
    """Geometric envelope ``C rho^t`` from the Doeblin certificate, verified up to ``horizon``.

    Distances are measured to ``mu`` (default: the linear-solve stationary
    law).  Since ``mu`` is only approximately stationary, the check allows
    ``r N / eps`` on top of ``slack``, with ``r = ||mu P - mu||_1``: that bounds
    ``||mu - pi||_1`` for the exact stationary law ``pi``.
    """
    P = as_stochastic(P)
    cert = _require_ergodic(P)
    mu = stationary_oracle(P) if mu is None else np.asarray(mu, dtype=float)
    K = contraction_factor(cert)
    rho = K ** (1.0 / cert.power_N)
    C = 2.0 / K
    dist = mixing_distances(P, mu, horizon)
    env = C * rho ** np.arange(horizon + 1)
    excess = dist - env
    mu_err = float(np.abs(mu @ P.rows - mu).sum()) * cert.power_N / cert.epsilon
    if np.any(excess > slack + mu_err):
        t = int(np.argmax(excess))
        raise EnvelopeViolated(f"distance {dist[t]!r} exceeds envelope {env[t]!r} at t={t}")
    return MixingCertificate(C, rho, horizon, float(max(excess.max(), 0.0)))


def random_ergodic_matrix(n: int, rng: np.random.Generator, density: float = 0.5) -> StochasticMatrix:
    """Random ergodic matrix with a sparse support: a Hamiltonian cycle, one self-loop, random extras."""
    mask = rng.random((n, n)) < density
    perm = rng.permutation(n)
    mask[perm, np.roll(perm, -1)] = True
    mask[perm[0], perm[0]] = True
    W = np.where(mask, rng.uniform(0.05, 1.0, (n, n)), 0.0)
    return StochasticMatrix(W / W.sum(axis=1, keepdims=True))
