"""Generic stochastic-approximation machinery.

l_p Lyapunov functions and empirical checks of their conditions, skeleton
anchors, conditional expectations through kernel powers, the split of
Markovian noise into a martingale-difference part and a bias part, and the
deterministic Robbins-Siegmund envelope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .algorithms import StepSchedule
from .errors import (DriftViolated, GrowthViolated, NuOutOfRange, RecursionInfeasible,
                     TraceTooShort)
from .markov import StochasticMatrix, as_stochastic
from .rng import STREAM_MC, rng_stream
from .trajectory import SamplePath, categorical_cdf

DRIFT_FLOOR = 1e-10
GROWTH_CAP = 1e6


# --------------------------------------------------------------------- Lyapunov

@dataclass(frozen=True)
class LyapunovP:
    exponent_p: float = 2.0

    def __post_init__(self):
        if not self.exponent_p >= 2.0:
            raise ValueError(f"p must be >= 2, got {self.exponent_p}")


def _as_lp(lp) -> LyapunovP:
    return lp if isinstance(lp, LyapunovP) else LyapunovP(float(lp))


def phi_value(lp, x) -> float:
    """0.5 * ||x||_p^2, evaluated on x / max|x| to avoid overflow for large p."""
    p = _as_lp(lp).exponent_p
    x = np.asarray(x, dtype=float).ravel()
    m = np.abs(x).max() if x.size else 0.0
    if m == 0.0:
        return 0.0
    if p == 2.0:
        return 0.5 * float(x @ x)
    y = np.abs(x) / m
    return 0.5 * m * m * float((y ** p).sum()) ** (2.0 / p)


def phi_gradient(lp, x) -> np.ndarray:
    """sign(x_i) |x_i|^(p-1) ||x||_p^(2-p); the zero vector at x = 0."""
    p = _as_lp(lp).exponent_p
    x = np.asarray(x, dtype=float)
    if p == 2.0:
        return x.copy()
    m = np.abs(x).max() if x.size else 0.0
    if m == 0.0:
        return np.zeros_like(x)
    y = x / m
    norm = float((np.abs(y) ** p).sum()) ** (1.0 / p)
    return m * np.sign(y) * np.abs(y) ** (p - 1.0) * norm ** (2.0 - p)


@dataclass
class AssumptionReport:
    lipschitz_L: float | None = None
    smoothness_C: float | None = None
    norm_equiv_constants: dict = field(default_factory=dict)
    drift_eta: float | None = None
    growth_C1_C2: tuple | None = None
    mds_max_violation: float | None = None
    extras: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    drift_floor: float = DRIFT_FLOOR

    @property
    def passed(self) -> bool:
        ok = self.drift_eta is not None and self.drift_eta > self.drift_floor
        if self.growth_C1_C2 is not None:
            ok = ok and all(np.isfinite(c) and c <= GROWTH_CAP for c in self.growth_C1_C2)
        if self.mds_max_violation is not None:
            ok = ok and self.extras.get("mds_passed", True)
        return bool(ok)

    def to_kv(self) -> dict:
        out = {
            "lipschitz_L": self.lipschitz_L,
            "smoothness_C": self.smoothness_C,
            "drift_eta": self.drift_eta,
        }
        for k, v in self.norm_equiv_constants.items():
            out[f"norm_equiv.{k}"] = v
        if self.growth_C1_C2 is not None:
            out["growth_C1"], out["growth_C2"] = self.growth_C1_C2
        out["mds_max_violation"] = self.mds_max_violation
        out.update(self.extras)
        out["drift_floor"] = self.drift_floor
        out["passed"] = self.passed
        return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in out.items() if v is not None}


def fit_lipschitz(f, x_star, sample_count: int = 1000, seed: int = 0, scale: float = 1.0) -> float:
    """Largest observed ||f(x) - f(y)||_2 / ||x - y||_2 over random pairs near x_star."""
    gen = np.random.default_rng(seed)
    x_star = np.asarray(x_star, dtype=float)
    best = 0.0
    for _ in range(sample_count):
        x = x_star + scale * gen.normal(size=x_star.shape)
        y = x_star + scale * gen.normal(size=x_star.shape)
        d = np.linalg.norm((x - y).ravel())
        if d > 0:
            best = max(best, np.linalg.norm((np.asarray(f(x)) - np.asarray(f(y))).ravel()) / d)
    return float(best)


def check_lyapunov_conditions(lp, f, x_star, sample_count: int = 1000, seed: int = 0,
                              scale: float = 1.0, tol: float = DRIFT_FLOOR,
                              raise_on_violation: bool = True) -> AssumptionReport:
    """Fit the constants of the four Lyapunov conditions on random samples.

    (i) smoothness constant C: max of (phi(y) - phi(x) - <grad phi(x), y - x>) / ||y - x||_2^2;
    (ii) phi(0) = 0 and phi > 0 away from 0;
    (iii) norm comparisons: <grad phi(x), x> / phi(x) (exactly 2),
          sum |grad_i||y_i| / sqrt(phi(x) phi(y)), ||x||_2 / sqrt(phi(x)), sqrt(phi(x)) / ||x||_2;
    (iv) drift eta: min of -<grad phi(x - x*), f(x) - x> / phi(x - x*).

    Raises DriftViolated when the fitted eta is not above ``tol`` (unless
    ``raise_on_violation`` is false, in which case the report says so).
    """
    lp = _as_lp(lp)
    gen = np.random.default_rng(seed)
    x_star = np.asarray(x_star, dtype=float)
    shape = x_star.shape
    rep = AssumptionReport(drift_floor=tol)

    smooth, smooth_w = 0.0, None
    homog, holder, l2_over, over_l2 = [], 0.0, 0.0, 0.0
    positive = True
    for _ in range(sample_count):
        x = scale * gen.normal(size=shape)
        y = scale * gen.normal(size=shape)
        px, py = phi_value(lp, x), phi_value(lp, y)
        gx = phi_gradient(lp, x)
        d = (y - x).ravel()
        gap = py - px - float(gx.ravel() @ d)
        ratio = gap / float(d @ d)
        if ratio > smooth:
            smooth, smooth_w = ratio, (x, y)
        positive = positive and px > 0.0
        homog.append(float(gx.ravel() @ x.ravel()) / px)
        holder = max(holder, float(np.abs(gx).ravel() @ np.abs(y).ravel()) / math.sqrt(px * py))
        n2 = float(np.linalg.norm(x.ravel()))
        l2_over = max(l2_over, n2 / math.sqrt(px))
        over_l2 = max(over_l2, math.sqrt(px) / n2)

    rep.smoothness_C = smooth
    rep.witnesses["smoothness"] = smooth_w
    rep.extras["phi_zero_at_origin"] = phi_value(lp, np.zeros(shape)) == 0.0
    rep.extras["phi_positive_off_origin"] = positive
    rep.norm_equiv_constants = {
        "grad_dot_x_over_phi_min": min(homog),
        "grad_dot_x_over_phi_max": max(homog),
        "holder_C": holder,
        "l2_over_sqrt_phi": l2_over,
        "sqrt_phi_over_l2": over_l2,
    }

    eta, eta_w = math.inf, None
    for _ in range(sample_count):
        dx = scale * gen.normal(size=shape)
        x = x_star + dx
        val = float(phi_gradient(lp, dx).ravel() @ (np.asarray(f(x)) - x).ravel())
        r = -val / phi_value(lp, dx)
        if r < eta:
            eta, eta_w = r, x
    rep.drift_eta = eta
    rep.witnesses["drift"] = eta_w
    rep.extras["p"] = lp.exponent_p
    rep.extras["drift_passed"] = bool(eta > tol)
    if not eta > tol and raise_on_violation:
        raise DriftViolated(f"fitted drift rate {eta!r} is not positive (p={lp.exponent_p})")
    return rep


def choose_p_for_q(num_sa_pairs: int, gamma_prime: float) -> tuple[float, float]:
    """Smallest p = 2^k >= 2 with gamma' n^(1/p) <= (1 + gamma') / 2, and eta = 1 - gamma' n^(1/p)."""
    if not 0.0 <= gamma_prime < 1.0:
        raise ValueError("gamma_prime must lie in [0, 1)")
    target = (1.0 + gamma_prime) / 2.0
    p = 2.0
    while gamma_prime * num_sa_pairs ** (1.0 / p) > target:
        p *= 2.0
    return p, 1.0 - gamma_prime * num_sa_pairs ** (1.0 / p)


# ---------------------------------------------------------------------- anchors

_EM_B2 = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0)  # B2, B4, B6, B8
_DIRECT = 20_000


def inv_poly_sum(nu: float, offset: int, a: int, b: int) -> float:
    """sum_{t=a}^{b-1} (t + offset)^(-nu), direct for short ranges, Euler-Maclaurin for long ones."""
    if b <= a:
        return 0.0
    if b - a <= _DIRECT:
        t = np.arange(a, b, dtype=np.float64) + offset
        return math.fsum((1.0 / t ** nu).tolist())
    lo = a + offset
    head = 0.0
    if lo < 1000:
        head = inv_poly_sum(nu, 0, lo, 1000)
        lo = 1000
    hi = b + offset
    A, B = float(lo), float(hi)
    integral = A ** (1.0 - nu) * math.expm1((1.0 - nu) * math.log1p((hi - lo) / A)) / (1.0 - nu)
    total = integral + 0.5 * (A ** -nu - B ** -nu)
    # f^(k)(x) = (-1)^k nu (nu+1) ... (nu+k-1) x^(-nu-k)
    for j, b2j in enumerate(_EM_B2, start=1):
        k = 2 * j - 1
        coef = math.prod(nu + i for i in range(k)) * (-1) ** k
        total += b2j / math.factorial(2 * j) * coef * (B ** (-nu - k) - A ** (-nu - k))
    return head + total


def anchor_exponent_interval(nu: float) -> tuple[float, float]:
    return 2.0 / (2.0 - nu), 1.0 / (2.0 * (1.0 - nu))


@dataclass(frozen=True, eq=False)
class AnchorSequence:
    anchors: tuple            # t_0 = 0 < t_1 < ... < t_M (python ints)
    betas: np.ndarray         # beta_0 .. beta_{M-1}
    exponent_a: float | None
    alpha_at_anchor: np.ndarray
    C: float
    schedule: StepSchedule | None = None
    evidence: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.betas)

    def ratios(self) -> np.ndarray:
        return self.alpha_at_anchor / self.betas ** 2

    def holds_with(self, C: float) -> bool:
        return bool(np.all(self.alpha_at_anchor <= C * self.betas ** 2))

    def rows(self):
        """(m, t_m, beta_m, alpha_at_anchor, beta_sq) rows for CSV export."""
        for m in range(self.M):
            yield (m, self.anchors[m], float(self.betas[m]), float(self.alpha_at_anchor[m]),
                   float(self.betas[m] ** 2))

    @classmethod
    def from_times(cls, times, schedule: StepSchedule) -> "AnchorSequence":
        """Anchors at explicit times (e.g. t_m = m); betas from the schedule."""
        times = tuple(int(t) for t in times)
        if times[0] != 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("anchor times must start at 0 and increase strictly")
        al = schedule.alphas(times[-1])
        betas = np.array([al[a:b].sum() for a, b in zip(times, times[1:])])
        at = al[list(times[:-1])]
        return cls(times, betas, None, at, float((at / betas ** 2).max()), schedule)


def build_anchors(schedule: StepSchedule, count_M: int, C: float | None = None) -> AnchorSequence:
    """Anchors t_m = ceil(m^a), a the midpoint of (2/(2-nu), 1/(2(1-nu))).

    The interval is nonempty exactly when nu > 2/3.  ``C`` defaults to the
    largest observed alpha_{t_m} / beta_m^2; a declared ``C`` is checked
    instead and a violation raises ValueError.
    """
    if schedule.family != "inv_poly":
        raise NuOutOfRange("anchors are defined for inv_poly schedules only")
    nu = schedule.nu
    if not 2.0 / 3.0 < nu < 1.0:
        raise NuOutOfRange(f"nu={nu!r} must lie in (2/3, 1) for the anchor exponent interval to be nonempty")
    lo, hi = anchor_exponent_interval(nu)
    a = 0.5 * (lo + hi)
    times = [0]
    for m in range(1, count_M + 1):
        times.append(max(math.ceil(m ** a), times[-1] + 1))
    off = schedule.offset
    betas = np.array([inv_poly_sum(nu, off, times[m], times[m + 1]) for m in range(count_M)])
    at = np.array([1.0 / (t + off) ** nu for t in times[:-1]])
    ratios = at / betas ** 2
    fitted = float(ratios.max())
    if C is not None and np.any(ratios > C):
        m = int(np.argmax(ratios))
        raise ValueError(f"anchor condition fails at m={m}: ratio {ratios[m]!r} > C={C!r}")
    half = count_M // 2
    sq = betas ** 2
    evidence = {
        "sum_beta": float(betas.sum()),
        "sum_beta_sq": float(sq.sum()),
        "beta_sq_tail_increment": float(sq[half:].sum()),
        "beta_sq_stabilized": bool(sq[half:].sum() <= 1e-6),
        "ratio_max_first_half": float(ratios[:max(half, 1)].max()),
        "ratio_max_second_half": float(ratios[half:].max()) if half < count_M else float("nan"),
    }
    return AnchorSequence(tuple(times), betas, a, at, fitted if C is None else float(C),
                          schedule, evidence)


# ------------------------------------------------------- conditional expectation

@lru_cache(maxsize=8192)
def kernel_power(P: StochasticMatrix, k: int) -> np.ndarray:
    """P^k by repeated squaring; results are cached per (kernel, k) and read-only."""
    if k < 0:
        raise ValueError("negative power")
    if k == 0:
        out = np.eye(P.n)
    elif k == 1:
        out = P.rows
    elif k % 2 == 0:
        h = kernel_power(P, k // 2)
        out = h @ h
    else:
        out = kernel_power(P, k - 1) @ P.rows
    out = np.array(out)
    out.setflags(write=False)
    return out


def conditional_expectation_G(kernel_Y, y0: int, lag_k: int, G, w) -> np.ndarray:
    """sum_y (P^lag)[y0, y] G(w, y)."""
    if lag_k < 1:
        raise ValueError("lag must be >= 1")
    row = kernel_power(as_stochastic(kernel_Y), int(lag_k))[y0]
    acc = None
    for y in np.flatnonzero(row):
        term = row[y] * np.asarray(G(w, int(y)), dtype=float)
        acc = term if acc is None else acc + term
    return acc


def _G_table(G, w, n_y: int) -> np.ndarray:
    return np.stack([np.asarray(G(w, y), dtype=float).ravel() for y in range(n_y)])


# ---------------------------------------------------------- noise decomposition

@dataclass(frozen=True, eq=False)
class NoiseDecomposition:
    e1: np.ndarray               # (M, d)
    e2: np.ndarray               # (M, d)
    skeleton_iterates: np.ndarray  # (M + 1, d)
    centering: np.ndarray        # (M, d): sum_t alpha_t E[G(w_{t_m}, Y_{t+1}) | Y_{t_m}] as used
    anchor_times: tuple
    anchor_states: np.ndarray
    betas: np.ndarray
    alphas: np.ndarray
    lag_offset: int
    reconstruction_residual: float


def decompose_noise(trace, path, anchors: AnchorSequence, G, g, kernel_Y, schedule: StepSchedule,
                    lag_offset: int = 0) -> NoiseDecomposition:
    """Split each anchor segment of the iterates into beta_m g(w_{t_m}) + e1 + e2.

    ``trace`` holds dense iterates w_0..w_T (any shape per iterate; flattened),
    ``path`` the augmented-chain indices Y_0..Y_T.  ``lag_offset`` shifts the
    kernel power used for centering (a deliberately wrong value is the
    negative control for the martingale-difference check).
    """
    W = np.asarray(trace, dtype=float)
    W = W.reshape(W.shape[0], -1)
    Y = path.states if isinstance(path, SamplePath) else np.asarray(path, dtype=np.int64)
    K = as_stochastic(kernel_Y)
    times = anchors.anchors
    M = len(times) - 1
    T = times[-1]
    if W.shape[0] - 1 < T or Y.size - 1 < T:
        raise TraceTooShort(f"need iterates and path up to t={T}, have {W.shape[0] - 1} and {Y.size - 1}")
    al = schedule.alphas(T)
    d = W.shape[1]
    e1 = np.zeros((M, d))
    e2 = np.zeros((M, d))
    cen = np.zeros((M, d))
    betas = np.zeros(M)
    for m in range(M):
        t0, t1 = times[m], times[m + 1]
        wm = W[t0]
        y0 = int(Y[t0])
        table = _G_table(G, wm, K.n)
        gm = np.asarray(g(wm), dtype=float).ravel()
        for t in range(t0, t1):
            a = al[t]
            cond = kernel_power(K, t + 1 - t0 + lag_offset)[y0] @ table
            g_anchor = table[Y[t + 1]]
            g_now = np.asarray(G(W[t], int(Y[t + 1])), dtype=float).ravel()
            cen[m] += a * cond
            e1[m] += a * (g_anchor - cond)
            e2[m] += a * (cond - gm + g_now - g_anchor)
            betas[m] += a
    skel = W[list(times)]
    gs = np.stack([np.asarray(g(skel[m]), dtype=float).ravel() for m in range(M)]) if M else np.zeros((0, d))
    recon = skel[:-1] + betas[:, None] * gs + e1 + e2
    resid = float(np.abs(recon - skel[1:]).max()) if M else 0.0
    return NoiseDecomposition(e1, e2, skel, cen, tuple(times), Y[list(times[:-1])].copy(), betas,
                              al, lag_offset, resid)


def check_noise_growth(decomp: NoiseDecomposition, betas=None, schedule=None,
                       cap: float = GROWTH_CAP) -> tuple[float, float]:
    """Smallest C with ||e1|| <= C beta (1 + ||w||^2) and ||e2|| <= C beta^2 (1 + ||w||^2)."""
    b = decomp.betas if betas is None else np.asarray(betas, dtype=float)
    scale = 1.0 + (decomp.skeleton_iterates[:-1] ** 2).sum(axis=1)
    n1 = np.linalg.norm(decomp.e1, axis=1)
    n2 = np.linalg.norm(decomp.e2, axis=1)
    C1 = float((n1 / (b * scale)).max()) if n1.size else 0.0
    C2 = float((n2 / (b ** 2 * scale)).max()) if n2.size else 0.0
    if not (np.isfinite(C1) and np.isfinite(C2)) or C1 > cap or C2 > cap:
        raise GrowthViolated(f"growth constants ({C1:.3e}, {C2:.3e}) exceed cap {cap:.1e}")
    return C1, C2


@dataclass(frozen=True)
class MdsResult:
    analytic_violation: float
    mc_max_z: float
    mc_anchors: tuple
    analytic_tol: float = 1e-10
    z_max: float = 3.0

    @property
    def passed(self) -> bool:
        return self.analytic_violation <= self.analytic_tol and self.mc_max_z <= self.z_max


def check_mds(decomp: NoiseDecomposition, kernel_Y, G, mc_samples: int = 10_000, seed=0,
              mc_anchors=None, n_mc_anchors: int = 5) -> MdsResult:
    """Check that e1 is centered given the anchor state.

    Analytic: the conditional mean of e1[m], recomputed with
    :func:`conditional_expectation_G`, minus the centering actually used.
    Monte Carlo: resample each selected segment ``mc_samples`` times from the
    anchor state and report the largest |mean| / standard error over
    anchors and coordinates.
    """
    K = as_stochastic(kernel_Y)
    times = decomp.anchor_times
    M = len(times) - 1
    al = decomp.alphas
    worst = 0.0
    for m in range(M):
        t0, t1 = times[m], times[m + 1]
        wm = decomp.skeleton_iterates[m]
        y0 = int(decomp.anchor_states[m])
        acc = np.zeros_like(wm)
        for t in range(t0, t1):
            acc = acc + al[t] * np.asarray(conditional_expectation_G(K, y0, t + 1 - t0, G, wm)).ravel()
        worst = max(worst, float(np.abs(acc - decomp.centering[m]).max()))

    if mc_anchors is None:
        mc_anchors = sorted(set(np.linspace(0, M - 1, min(n_mc_anchors, M)).astype(int).tolist())) if M else []
    cdf = categorical_cdf(K.rows)
    stream = rng_stream(seed, STREAM_MC)
    zmax = 0.0
    for m in mc_anchors:
        t0, t1 = times[m], times[m + 1]
        table = _G_table(G, decomp.skeleton_iterates[m], K.n)
        state = np.full(mc_samples, int(decomp.anchor_states[m]), dtype=np.int64)
        tot = np.zeros((mc_samples, table.shape[1]))
        for t in range(t0, t1):
            u = stream.uniforms(mc_samples)
            state = (cdf[state] <= u[:, None]).sum(axis=1)
            tot += al[t] * table[state]
        e = tot - decomp.centering[m]
        mean = e.mean(axis=0)
        se = e.std(axis=0, ddof=1) / math.sqrt(mc_samples)
        z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0),
                     np.where(np.abs(mean) > 1e-12, np.inf, 0.0))
        zmax = max(zmax, float(z.max()))
    return MdsResult(worst, zmax, tuple(mc_anchors))


# ------------------------------------------------------ Robbins-Siegmund envelope and recursion

def robbins_siegmund_envelope(z0: float, T, C: float, steps: int):
    """Iterate z_{n+1} = max(0, 1 - T_n) z_n + C T_n^2 for ``steps`` steps.

    ``T`` is a StepSchedule, a callable n -> T_n, or an array of values.
    Returns (final value, trace of length steps + 1).
    """
    if z0 < 0 or C < 0:
        raise ValueError("z0 and C must be nonnegative")
    if isinstance(T, StepSchedule):
        Tn = T.alphas(steps)
    elif callable(T):
        Tn = np.array([T(n) for n in range(steps)], dtype=float)
    else:
        Tn = np.asarray(T, dtype=float)[:steps]
        if Tn.size < steps:
            raise ValueError("not enough T values")
    trace = kernels.rs_envelope(float(z0), Tn, float(C))
    return float(trace[-1]), trace


@dataclass(frozen=True)
class RecursionFit:
    C1: float
    C2: float
    n0: int


def fundamental_recursion_check(phi_trace, e1, grad_phi_at_anchors, betas,
                                cap: float = GROWTH_CAP) -> RecursionFit:
    """Fit phi_{m+1} <= (1 - C1 beta_m) phi_m + <grad phi_m, e1_m> + C2 beta_m^2 for m >= n0.

    C2 is the smallest feasible value (doubled when needed to leave room for a
    positive C1) and C1 the largest value in (0, 1 / max beta] compatible with
    it.  n0 is the first start index at which C2 stays below ``cap``; none up
    to half the trace raises RecursionInfeasible.
    """
    phi = np.asarray(phi_trace, dtype=float)
    b = np.asarray(betas, dtype=float)
    e1 = np.asarray(e1, dtype=float).reshape(len(b), -1)
    gp = np.asarray(grad_phi_at_anchors, dtype=float).reshape(len(b), -1)
    M = len(b)
    if phi.size != M + 1:
        raise ValueError("phi_trace must have one more entry than betas")
    R = phi[:-1] + (gp * e1).sum(axis=1) - phi[1:]
    c1_cap = 1.0 / b.max()

    def c1_for(c2, sl):
        pos = phi[:-1][sl] > 0
        if not pos.any():
            return c1_cap
        val = (R[sl][pos] + c2 * b[sl][pos] ** 2) / (b[sl][pos] * phi[:-1][sl][pos])
        return min(float(val.min()), c1_cap)

    for n0 in range(0, M // 2 + 1):
        sl = slice(n0, M)
        c2 = max(0.0, float((-R[sl] / b[sl] ** 2).max()))
        if c2 > cap:
            continue
        c1 = c1_for(c2, sl)
        if c1 <= 0:
            c2 = 2.0 * c2 + 1e-12
            c1 = c1_for(c2, sl)
        if c1 > 0 and c2 <= cap:
            return RecursionFit(c1, c2, n0)
    raise RecursionInfeasible("no start index up to half the trace admits bounded constants")
