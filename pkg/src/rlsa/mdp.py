"""Finite MDPs, policy-induced chains, TD matrices and exact fixed-point oracles.

Index conventions for augmented chains:
pair ``(s, s')`` -> ``s * nS + s'``;
state-action ``(s, a)`` -> ``s * nA + a``;
triple ``(s, a, s')`` -> ``(s * nA + a) * nS + s'``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotErgodic, NotNegativeDefinite, RankDeficient, SingularA
from .markov import (StochasticMatrix, is_aperiodic, is_irreducible, stationary_distribution,
                     validate_stochastic, validate_stochastic_vec)
from .rng import Stream

INSTANCE_STREAM = 100
ND_THRESHOLD = -1e-10
RANK_RATIO = 1e-10


@dataclass(frozen=True, eq=False)
class MdpSpec:
    reward: np.ndarray       # (S, A)
    transition: np.ndarray   # (S, A, S)
    discount: float
    init_dist: np.ndarray    # (S,)

    def __post_init__(self):
        r = np.array(self.reward, dtype=float)
        p = np.array(self.transition, dtype=float)
        if r.ndim != 2 or p.shape != r.shape + (r.shape[0],):
            raise ValueError(f"reward shape {r.shape} and transition shape {p.shape} disagree")
        p = np.stack([validate_stochastic(p[:, a, :]).rows for a in range(r.shape[1])], axis=1)
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        init = validate_stochastic_vec(self.init_dist, tol=1e-9)
        if init.size != r.shape[0]:
            raise ValueError("init_dist has the wrong length")
        for name, arr in (("reward", r), ("transition", p), ("init_dist", init)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]


@dataclass(frozen=True, eq=False)
class Policy:
    action_probs: np.ndarray  # (S, A)

    def __post_init__(self):
        pi = np.array(self.action_probs, dtype=float)
        if pi.ndim != 2:
            raise ValueError("policy must be an (S, A) table")
        pi = np.stack([validate_stochastic_vec(row, tol=1e-9) for row in pi])
        pi.setflags(write=False)
        object.__setattr__(self, "action_probs", pi)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True, eq=False)
class InducedChain:
    P_pi: StochasticMatrix
    r_pi: np.ndarray
    d_pi: np.ndarray
    discount: float

    @property
    def D_pi(self) -> np.ndarray:
        return np.diag(self.d_pi)

    @property
    def num_states(self) -> int:
        return self.P_pi.n

    @classmethod
    def from_mrp(cls, P, r, discount: float) -> "InducedChain":
        P = validate_stochastic(P)
        if not (is_irreducible(P) and is_aperiodic(P)):
            raise NotErgodic("induced chain is not irreducible and aperiodic")
        r = np.array(r, dtype=float)
        return cls(P, r, stationary_distribution(P), float(discount))


def induce_chain(mdp: MdpSpec, policy: Policy) -> InducedChain:
    pi = policy.action_probs
    if pi.shape != mdp.reward.shape:
        raise ValueError("policy and MDP dimensions disagree")
    P = np.einsum("sa,sat->st", pi, mdp.transition)
    r = (pi * mdp.reward).sum(axis=1)
    return InducedChain.from_mrp(P, r, mdp.discount)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    X: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("feature matrix must be (num_states, feature_dim)")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def check_rank(self) -> None:
        sv = np.linalg.svd(self.X, compute_uv=False)
        if sv.size < self.feature_dim or sv[0] == 0.0 or sv[-1] <= RANK_RATIO * sv[0]:
            raise RankDeficient("feature matrix does not have full column rank")


@dataclass(frozen=True, eq=False)
class TdMatrices:
    A: np.ndarray
    b: np.ndarray
    w_star: np.ndarray

    @property
    def eta(self) -> float:
        """Smallest eigenvalue of -(A + A^T)/2; positive iff A is negative definite."""
        return float(-np.linalg.eigvalsh((self.A + self.A.T) / 2).max())


def td_matrices(chain: InducedChain, features: FeatureMap, gamma: float | None = None,
                strict: bool = True) -> TdMatrices:
    """A = X^T D (gamma P - I) X, b = X^T D r, w* solving A w = -b.

    With ``strict=False`` the rank and definiteness checks are skipped and a
    least-squares solution is used when A is singular.
    """
    gamma = chain.discount if gamma is None else float(gamma)
    X = features.X
    if X.shape[0] != chain.num_states:
        raise ValueError("feature rows do not match the number of states")
    if strict:
        features.check_rank()
    D = chain.D_pi
    A = X.T @ D @ (gamma * chain.P_pi.rows - np.eye(chain.num_states)) @ X
    b = X.T @ D @ chain.r_pi
    try:
        w = np.linalg.solve(A, -b)
    except np.linalg.LinAlgError:
        if strict:
            raise SingularA(f"A is singular (condition estimate {np.linalg.cond(A):.3e})")
        w = np.linalg.lstsq(A, -b, rcond=None)[0]
    out = TdMatrices(A, b, w)
    if strict and -out.eta >= ND_THRESHOLD:
        raise NotNegativeDefinite(f"largest eigenvalue of sym(A) is {-out.eta!r}")
    return out


def value_function(chain: InducedChain, gamma: float | None = None) -> np.ndarray:
    gamma = chain.discount if gamma is None else float(gamma)
    n = chain.num_states
    return np.linalg.solve(np.eye(n) - gamma * chain.P_pi.rows, chain.r_pi)


def bellman_optimality_apply(mdp: MdpSpec, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1)


def optimal_q(mdp: MdpSpec, tol: float = 1e-10, return_iterations: bool = False):
    """Value iteration from zero until the iterate is within ``tol`` of q* in sup norm."""
    g = mdp.discount
    q = np.zeros_like(mdp.reward)
    if g == 0.0:
        q = mdp.reward.copy()
        return (q, 1) if return_iterations else q
    stop = tol * (1.0 - g) / g
    it = 0
    while True:
        nq = bellman_optimality_apply(mdp, q)
        it += 1
        if np.abs(nq - q).max() <= stop:
            q = nq
            break
        q = nq
    return (q, it) if return_iterations else q


def value_iteration_bound(mdp: MdpSpec, tol: float) -> int:
    g = mdp.discount
    rmax = np.abs(mdp.reward).max()
    if g == 0.0 or rmax == 0.0:
        return 1
    return max(math.ceil(math.log(tol * (1 - g) / rmax) / math.log(g)), 0) + 1


def occupancy(policy: Policy, d_pi) -> np.ndarray:
    """Stationary state-action weights d(s) pi(a|s)."""
    return np.asarray(d_pi)[:, None] * policy.action_probs


def weighted_bellman_apply(mdp: MdpSpec, policy: Policy, d_pi, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w = occupancy(policy, d_pi)
    return w * (bellman_optimality_apply(mdp, q) - q) + q


def pseudo_contraction_modulus(mdp: MdpSpec, policy: Policy, d_pi, q_star, samples: int = 1000,
                               seed: int = 0, scale: float = 1.0) -> float:
    """Largest observed ||T' q - q*||_inf / ||q - q*||_inf over random q around q*."""
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        dq = gen.normal(scale=scale, size=q_star.shape)
        q = q_star + dq
        num = np.abs(weighted_bellman_apply(mdp, policy, d_pi, q) - q_star).max()
        worst = max(worst, num / np.abs(dq).max())
    return worst


def pseudo_contraction_bound(mdp: MdpSpec, policy: Policy, d_pi) -> float:
    """Closed-form upper bound 1 - min_w (1 - gamma) on the modulus (1 if some weight is zero)."""
    return 1.0 - occupancy(policy, d_pi).min() * (1.0 - mdp.discount)


def augmented_td_kernel(chain: InducedChain) -> StochasticMatrix:
    """Kernel on pairs: ((s0, s0'), (s1, s1')) -> 1[s1 = s0'] P(s1, s1')."""
    n = chain.num_states
    P = chain.P_pi.rows
    K = np.zeros((n * n, n * n))
    for s0 in range(n):
        for s0p in range(n):
            K[s0 * n + s0p, s0p * n:(s0p + 1) * n] = P[s0p]
    return StochasticMatrix(K)


def pair_law(chain: InducedChain) -> np.ndarray:
    """Stationary law of the pair chain: d(s) P(s, s'), flattened."""
    return (chain.d_pi[:, None] * chain.P_pi.rows).ravel()


def state_action_kernel(mdp: MdpSpec, policy: Policy) -> StochasticMatrix:
    nS, nA = mdp.reward.shape
    K = np.einsum("sat,tb->satb", mdp.transition, policy.action_probs).reshape(nS * nA, nS * nA)
    return StochasticMatrix(K)


def augmented_q_kernel(mdp: MdpSpec, policy: Policy, check: bool = True) -> StochasticMatrix:
    """Kernel on triples: ((s, a, s'), (s1, a1, s1')) -> 1[s1 = s'] pi(a1|s1) p(s1'|s1, a1)."""
    nS, nA = mdp.reward.shape
    if check:
        sa = state_action_kernel(mdp, policy)
        if not (is_irreducible(sa) and is_aperiodic(sa)):
            raise NotErgodic("state-action chain is not irreducible and aperiodic")
    pi = policy.action_probs
    n = nS * nA * nS
    # row block for any triple ending in s' is the law of (s', a1, s1')
    next_law = (pi[:, :, None] * mdp.transition).reshape(nS, nA * nS)
    K = np.zeros((n, n))
    for idx in range(n):
        sp = idx % nS
        K[idx, sp * nA * nS:(sp + 1) * nA * nS] = next_law[sp]
    return StochasticMatrix(K)


def triple_law(mdp: MdpSpec, policy: Policy, d_pi) -> np.ndarray:
    """Stationary law of the triple chain: d(s) pi(a|s) p(s'|s, a), flattened."""
    return (occupancy(policy, d_pi)[:, :, None] * mdp.transition).ravel()


def decode_pair(idx, num_states: int):
    idx = np.asarray(idx)
    return idx // num_states, idx % num_states


def decode_triple(idx, num_states: int, num_actions: int):
    idx = np.asarray(idx)
    sa, sp = np.divmod(idx, num_states)
    s, a = np.divmod(sa, num_actions)
    return s, a, sp


def random_mdp(num_states: int, num_actions: int, discount: float, seed: int,
               reward_range=(0.0, 1.0)) -> MdpSpec:
    """Dense random MDP built from bit-pinned uniforms (Dirichlet(1) rows via exponentials)."""
    st = Stream(seed, INSTANCE_STREAM)
    e = -np.log1p(-st.uniforms(num_states * num_actions * num_states))
    p = e.reshape(num_states, num_actions, num_states)
    p = p / p.sum(axis=2, keepdims=True)
    lo, hi = reward_range
    r = lo + (hi - lo) * st.uniforms(num_states * num_actions).reshape(num_states, num_actions)
    return MdpSpec(r, p, discount, np.full(num_states, 1.0 / num_states))


def random_features(num_states: int, feature_dim: int, seed: int) -> FeatureMap:
    st = Stream(seed, INSTANCE_STREAM + 1)
    X = 2.0 * st.uniforms(num_states * feature_dim).reshape(num_states, feature_dim) - 1.0
    return FeatureMap(X)
