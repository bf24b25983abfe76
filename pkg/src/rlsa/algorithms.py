"""Tabular TD, linear TD and Q-learning updates, their F/f forms, and step-size schedules."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import HorizonExceeded
from .mdp import (FeatureMap, InducedChain, MdpSpec, Policy, TdMatrices, decode_pair, decode_triple,
                  induce_chain, optimal_q, td_matrices, weighted_bellman_apply)
from .trajectory import SamplePath


class RMClass(enum.Enum):
    SATISFIES = "Satisfies"
    FAILS_DIVERGENCE = "FailsDivergence"
    FAILS_SQUARE_SUMMABLE = "FailsSquareSummable"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes alpha_t, t = 0, 1, ...

    Families: ``inv_poly`` (1 / (t + offset)^nu), ``constant`` (c) and
    ``explicit`` (a finite list, one value per step).
    """

    family: str
    nu: float = 0.0
    offset: int = 2
    c: float = 0.0
    values: tuple = field(default=())

    def __post_init__(self):
        if self.family == "inv_poly":
            if self.offset < 1:
                raise ValueError("inv_poly offset must be >= 1")
        elif self.family == "constant":
            if not self.c > 0:
                raise ValueError("constant step must be positive")
        elif self.family == "explicit":
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            if any(not v > 0 for v in self.values):
                raise ValueError("explicit steps must be positive")
        else:
            raise ValueError(f"unknown schedule family {self.family!r}")

    @classmethod
    def inv_poly(cls, nu: float, offset: int = 2) -> "StepSchedule":
        return cls("inv_poly", nu=float(nu), offset=int(offset))

    @classmethod
    def constant(cls, c: float) -> "StepSchedule":
        return cls("constant", c=float(c))

    @classmethod
    def explicit(cls, values) -> "StepSchedule":
        return cls("explicit", values=tuple(values))

    @classmethod
    def parse(cls, text: str) -> "StepSchedule":
        """``inv_poly:NU:OFFSET``, ``inv_poly:NU`` or ``constant:C``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "inv_poly" and len(parts) in (2, 3):
                return cls.inv_poly(float(parts[1]), int(parts[2]) if len(parts) == 3 else 2)
            if parts[0] == "constant" and len(parts) == 2:
                return cls.constant(float(parts[1]))
        except ValueError as exc:
            raise ValueError(f"bad schedule {text!r}: {exc}") from None
        raise ValueError(f"bad schedule {text!r}; expected inv_poly:NU:OFFSET or constant:C")

    def name(self) -> str:
        if self.family == "inv_poly":
            return f"inv_poly:{self.nu!r}:{self.offset}"
        if self.family == "constant":
            return f"constant:{self.c!r}"
        return "explicit:" + ",".join(repr(v) for v in self.values)

    def alpha(self, t: int) -> float:
        if self.family == "inv_poly":
            return 1.0 / (t + self.offset) ** self.nu
        if self.family == "constant":
            return self.c
        return self.values[t]

    def alphas(self, n: int) -> np.ndarray:
        """alpha_0 .. alpha_{n-1}."""
        if self.family == "inv_poly":
            t = np.arange(n, dtype=np.float64) + self.offset
            return 1.0 / t ** self.nu
        if self.family == "constant":
            return np.full(n, self.c)
        if n > len(self.values):
            raise HorizonExceeded(f"explicit schedule has {len(self.values)} steps, {n} requested")
        return np.asarray(self.values[:n], dtype=np.float64)


def robbins_monro_class(schedule: StepSchedule) -> RMClass:
    """Symbolic classification; finite lists say nothing about the tail."""
    if schedule.family == "inv_poly":
        if schedule.nu > 1.0:
            return RMClass.FAILS_DIVERGENCE
        if schedule.nu > 0.5:
            return RMClass.SATISFIES
        return RMClass.FAILS_SQUARE_SUMMABLE
    if schedule.family == "constant":
        return RMClass.FAILS_SQUARE_SUMMABLE
    return RMClass.UNKNOWN


@dataclass(frozen=True, eq=False)
class LinearTdSpec:
    chain: InducedChain
    features: FeatureMap
    schedule: StepSchedule
    w0: np.ndarray = None
    strict: bool = True

    def __post_init__(self):
        w0 = np.zeros(self.features.feature_dim) if self.w0 is None else np.array(self.w0, dtype=float)
        if w0.shape != (self.features.feature_dim,):
            raise ValueError("w0 has the wrong dimension")
        object.__setattr__(self, "w0", w0)

    @property
    def discount(self) -> float:
        return self.chain.discount

    @cached_property
    def td(self) -> TdMatrices:
        return td_matrices(self.chain, self.features, strict=self.strict)

    @property
    def fixed_point(self) -> np.ndarray:
        return self.td.w_star


@dataclass(frozen=True, eq=False)
class QLearningSpec:
    mdp: MdpSpec
    behavior_policy: Policy
    schedule: StepSchedule
    q0: np.ndarray = None

    def __post_init__(self):
        q0 = np.zeros(self.mdp.reward.shape) if self.q0 is None else np.array(self.q0, dtype=float)
        if q0.shape != self.mdp.reward.shape:
            raise ValueError("q0 has the wrong shape")
        object.__setattr__(self, "q0", q0)

    @cached_property
    def chain(self) -> InducedChain:
        return induce_chain(self.mdp, self.behavior_policy)

    @cached_property
    def q_star(self) -> np.ndarray:
        return optimal_q(self.mdp)

    @property
    def fixed_point(self) -> np.ndarray:
        return self.q_star


def _td_F(w, y, X, r, gamma):
    s, sp = y
    return (r[s] + gamma * X[sp] @ w - X[s] @ w) * X[s] + w


def linear_td_step(w, y, alpha: float, spec: LinearTdSpec) -> np.ndarray:
    """w + alpha (F(w, y) - w), with F the map of :func:`eval_F_f_td`."""
    w = np.asarray(w, dtype=float)
    return w + alpha * (_td_F(w, y, spec.features.X, spec.chain.r_pi, spec.discount) - w)


def tabular_td_step(v, y, alpha: float, chain: InducedChain) -> np.ndarray:
    s, sp = y
    out = np.array(v, dtype=float)
    out[s] = v[s] + alpha * (chain.r_pi[s] + chain.discount * v[sp] - v[s])
    return out


def q_learning_step(q, y, alpha: float, mdp: MdpSpec) -> np.ndarray:
    s, a, sp = y
    out = np.array(q, dtype=float)
    out[s, a] = q[s, a] + alpha * (mdp.reward[s, a] + mdp.discount * q[sp].max() - q[s, a])
    return out


def eval_F_f_td(spec: LinearTdSpec):
    """F(w, (s, s')) = (r(s) + gamma x(s')^T w - x(s)^T w) x(s) + w and f(w) = A w + b + w."""
    X, r, g = spec.features.X, spec.chain.r_pi, spec.discount
    A, b = spec.td.A, spec.td.b

    def F(w, y):
        return _td_F(w, y, X, r, g)

    def f(w):
        return A @ w + b + w

    return F, f


def eval_F_f_q(spec: QLearningSpec):
    """F(q, (s, a, s')) moves only entry (s, a); f(q) is the weighted Bellman operator."""
    mdp, pol, d = spec.mdp, spec.behavior_policy, spec.chain.d_pi

    def F(q, y):
        s, a, sp = y
        out = np.array(q, dtype=float)
        out[s, a] += mdp.reward[s, a] + mdp.discount * q[sp].max() - q[s, a]
        return out

    def f(q):
        return weighted_bellman_apply(mdp, pol, d, q)

    return F, f


def td_noise_functions(spec: LinearTdSpec):
    """G(w, y) = F(w, y) - w and g(w) = f(w) - w with y an index of the pair chain."""
    F, f = eval_F_f_td(spec)
    n = spec.chain.num_states

    def G(w, y):
        return F(w, divmod(int(y), n)) - w

    def g(w):
        return f(w) - w

    return G, g


def q_noise_functions(spec: QLearningSpec):
    """As :func:`td_noise_functions` for Q-learning on flattened tables and triple indices."""
    F, f = eval_F_f_q(spec)
    shape = spec.mdp.reward.shape
    nS, nA = shape

    def G(x, y):
        s, a, sp = decode_triple(int(y), nS, nA)
        q = x.reshape(shape)
        return (F(q, (int(s), int(a), int(sp))) - q).ravel()

    def g(x):
        q = x.reshape(shape)
        return (f(q) - q).ravel()

    return G, g


@dataclass(frozen=True, eq=False)
class IterateTrace:
    checkpoints: np.ndarray
    iterates: np.ndarray
    errors: np.ndarray
    fixed_point: np.ndarray


def _indices(path) -> np.ndarray:
    return path.states if isinstance(path, SamplePath) else np.asarray(path, dtype=np.int64)


def run_iterates(spec, path, checkpoints) -> IterateTrace:
    """Apply the update along ``path`` (augmented-chain indices); step t reads element t + 1.

    Errors are l2 distances to w* for linear TD and sup-norm distances to q*
    for Q-learning.
    """
    y = _indices(path)
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if cps.size == 0:
        raise ValueError("at least one checkpoint is required")
    if cps[0] < 0 or cps[-1] > y.size - 1:
        raise HorizonExceeded(f"checkpoint {int(cps[-1])} beyond path horizon {y.size - 1}")
    T = int(cps[-1])
    alphas = spec.schedule.alphas(T)
    if isinstance(spec, LinearTdSpec):
        s, sp = decode_pair(y, spec.chain.num_states)
        its = kernels.linear_td_run(s, sp, spec.features.X, spec.chain.r_pi, spec.discount,
                                    alphas, spec.w0, cps)
        ref = spec.fixed_point
        err = np.sqrt(((its - ref) ** 2).sum(axis=1))
    elif isinstance(spec, QLearningSpec):
        s, a, sp = decode_triple(y, spec.mdp.num_states, spec.mdp.num_actions)
        its = kernels.q_learning_run(s, a, sp, spec.mdp.reward, spec.mdp.discount,
                                     alphas, spec.q0, cps)
        ref = spec.fixed_point
        err = np.abs(its - ref).reshape(len(cps), -1).max(axis=1)
    else:
        raise TypeError(f"unsupported spec {type(spec).__name__}")
    return IterateTrace(cps, its, err, ref)
