"""Multi-seed convergence experiments for linear TD and Q-learning.

Each experiment draws one sample stream per seed, runs the update along it,
records the error to the solver-computed fixed point on a geometric grid of
checkpoints and aggregates the per-seed curves into a finite-horizon verdict.
"""
from __future__ import annotations

import csv
import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algorithms import (LinearTdSpec, QLearningSpec, RMClass, StepSchedule, eval_F_f_q, eval_F_f_td,
                         q_noise_functions, robbins_monro_class, run_iterates, td_noise_functions)
from .errors import GrowthViolated, NotErgodic, NuOutOfRange, ScheduleNotRobbinsMonro
from .markov import StochasticMatrix
from .mdp import (augmented_q_kernel, augmented_td_kernel, occupancy, pair_law,
                  pseudo_contraction_bound, pseudo_contraction_modulus, triple_law)
from .rng import parse_seed
from .sa import (DRIFT_FLOOR, AnchorSequence, AssumptionReport, LyapunovP, build_anchors, check_lyapunov_conditions,
                 check_mds, check_noise_growth, choose_p_for_q, decompose_noise, fit_lipschitz,
                 phi_value)
from .trajectory import PathSpec, sample_iid_pairs, sample_iid_triples, sample_path

EXPERIMENTS = ("td-markov", "td-iid", "q-markov", "q-iid")
DIVERGENCE_FACTOR = 10.0


class Verdict(str, enum.Enum):
    CONVERGED = "Converged"
    INCONCLUSIVE = "Inconclusive"
    DIVERGED = "Diverged"


EXIT_CODES = {Verdict.CONVERGED: 0, Verdict.INCONCLUSIVE: 2, Verdict.DIVERGED: 3}


@dataclass(frozen=True)
class Thresholds:
    final_error_rel: float = 0.1      # median final error <= this * median initial error
    decay_factor_min: float = 4.0     # median error at T <= median error at T/10 / this


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    experiment: str
    problem: LinearTdSpec | QLearningSpec
    seeds: tuple
    horizon: int
    thresholds: Thresholds = Thresholds()
    num_checkpoints: int = 16
    experiment_id: str = "experiment"
    init_dist: np.ndarray | None = None   # law of the first state; defaults to uniform
    assumption_samples: int = 1000
    assumption_seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.experiment.startswith("td") != isinstance(self.problem, LinearTdSpec):
            raise ValueError(f"{self.experiment} needs a {'linear TD' if self.experiment.startswith('td') else 'Q-learning'} problem")
        seeds = tuple(parse_seed(s) for s in self.seeds)
        if len(seeds) < 2:
            raise ValueError("at least 2 seeds are required")
        object.__setattr__(self, "seeds", seeds)
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.num_checkpoints < 2:
            raise ValueError("num_checkpoints must be >= 2")
        n = self.num_states
        init = np.full(n, 1.0 / n) if self.init_dist is None else np.asarray(self.init_dist, dtype=float)
        if init.shape != (n,):
            raise ValueError("init_dist has the wrong length")
        object.__setattr__(self, "init_dist", init)

    @property
    def num_states(self) -> int:
        p = self.problem
        return p.chain.num_states if isinstance(p, LinearTdSpec) else p.mdp.num_states

    @property
    def schedule(self) -> StepSchedule:
        return self.problem.schedule


def checkpoint_grid(horizon: int, count: int = 16) -> np.ndarray:
    """0, about ``count`` log-spaced steps up to the horizon, and horizon // 10."""
    if horizon == 0:
        return np.array([0], dtype=np.int64)
    g = np.round(np.geomspace(1, horizon, count)).astype(np.int64)
    return np.array(sorted({0, horizon, horizon // 10, *g.tolist()}), dtype=np.int64)


def convergence_verdict(checkpoints, error_curves, thresholds: Thresholds) -> Verdict:
    """Finite-horizon verdict from per-seed error curves (rows: seeds, columns: checkpoints)."""
    cps = np.asarray(checkpoints)
    E = np.atleast_2d(np.asarray(error_curves, dtype=float))
    if cps.size < 2 or E.shape[1] != cps.size:
        return Verdict.INCONCLUSIVE
    med = np.median(E, axis=0)
    H = int(cps[-1])
    tenth = np.flatnonzero(cps == H // 10)
    if not np.isfinite(med[-1]) or med[-1] > DIVERGENCE_FACTOR * med[0]:
        return Verdict.DIVERGED
    if tenth.size == 0 or H // 10 == H:
        return Verdict.INCONCLUSIVE
    m10 = med[tenth[0]]
    if med[-1] <= thresholds.final_error_rel * med[0] and med[-1] * thresholds.decay_factor_min <= m10:
        return Verdict.CONVERGED
    return Verdict.INCONCLUSIVE


def seed_passes(checkpoints, errors, thresholds: Thresholds) -> bool:
    """The verdict rule applied to a single seed's curve."""
    e = np.asarray(errors, dtype=float)
    return convergence_verdict(checkpoints, np.vstack([e, e]), thresholds) is Verdict.CONVERGED


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    experiment_id: str
    experiment: str
    seeds: tuple
    checkpoints: np.ndarray
    errors: np.ndarray          # (seeds, checkpoints)
    phis: np.ndarray            # (seeds, checkpoints)
    verdict: Verdict
    thresholds: Thresholds
    fixed_point: np.ndarray
    lyapunov_p: float
    assumption_report: AssumptionReport
    diagnostics: tuple = ()

    @property
    def median(self) -> np.ndarray:
        return np.median(self.errors, axis=0)

    def quantile(self, q: float) -> np.ndarray:
        return np.quantile(self.errors, q, axis=0)

    @property
    def seed_pass_fraction(self) -> float:
        return float(np.mean([seed_passes(self.checkpoints, e, self.thresholds) for e in self.errors]))

    def monotone_violations(self) -> int:
        """Increases of the median curve between successive checkpoints from horizon/10 on."""
        H = int(self.checkpoints[-1])
        keep = self.checkpoints >= H // 10
        return int((np.diff(self.median[keep]) > 0).sum())

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def trace_rows(self):
        for i, seed in enumerate(self.seeds):
            for j, step in enumerate(self.checkpoints.tolist()):
                yield self.experiment_id, seed, step, float(self.errors[i, j]), float(self.phis[i, j])

    def to_kv(self) -> dict:
        med = self.median
        out = {
            "experiment_id": self.experiment_id,
            "experiment": self.experiment,
            "verdict": self.verdict.value,
            "seeds": len(self.seeds),
            "horizon": int(self.checkpoints[-1]),
            "schedule": None,
            "threshold.final_error_rel": self.thresholds.final_error_rel,
            "threshold.decay_factor_min": self.thresholds.decay_factor_min,
            "median_initial_error": float(med[0]),
            "median_final_error": float(med[-1]),
            "seed_pass_fraction": self.seed_pass_fraction,
            "monotone_violations": self.monotone_violations(),
            "lyapunov_p": self.lyapunov_p,
            "fixed_point": " ".join(repr(float(v)) for v in np.ravel(self.fixed_point)),
        }
        if med.size > 1:
            H = int(self.checkpoints[-1])
            j = np.flatnonzero(self.checkpoints == H // 10)
            if j.size:
                out["median_error_at_tenth"] = float(med[j[0]])
                out["decay_factor"] = float(med[j[0]] / med[-1]) if med[-1] > 0 else float("inf")
            out["final_over_initial"] = float(med[-1] / med[0]) if med[0] > 0 else float("nan")
        out = {k: v for k, v in out.items() if v is not None}
        for k, v in self.assumption_report.to_kv().items():
            out[f"assumption.{k}"] = v
        for i, d in enumerate(self.diagnostics):
            out[f"diagnostic.{i}"] = d
        return out


def write_trace_csv(reports, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["experiment_id", "seed", "step", "error", "phi"])
    if isinstance(reports, ConvergenceReport):
        reports = [reports]
    for rep in reports:
        for eid, seed, step, err, phi in rep.trace_rows():
            w.writerow([eid, seed, step, repr(err), repr(phi)])


# ------------------------------------------------------------------ sampling

def _td_sampler(config: ExperimentConfig, iid: bool):
    chain = config.problem.chain
    H = config.horizon
    if iid:
        n = chain.num_states

        def draw(seed):
            pairs = sample_iid_pairs(chain.d_pi, chain.P_pi, H + 1, seed)
            return pairs[:, 0] * n + pairs[:, 1]
        return draw
    K = augmented_td_kernel(chain)
    init = (config.init_dist[:, None] * chain.P_pi.rows).ravel()
    return lambda seed: sample_path(PathSpec(K, init, H, seed)).states


def _q_sampler(config: ExperimentConfig, iid: bool, check: bool):
    spec = config.problem
    mdp, pol = spec.mdp, spec.behavior_policy
    H = config.horizon
    if iid:
        law = occupancy(pol, spec.chain.d_pi)
        return lambda seed: sample_iid_triples(law, mdp.transition, H + 1, seed)
    K = augmented_q_kernel(mdp, pol, check=check)
    init = triple_law(mdp, pol, config.init_dist)
    return lambda seed: sample_path(PathSpec(K, init, H, seed)).states


# --------------------------------------------------------------- assumptions

def _lyapunov_setup(config: ExperimentConfig):
    """(p, f on flat vectors, flat fixed point, extra report entries)."""
    spec = config.problem
    if isinstance(spec, LinearTdSpec):
        _, f = eval_F_f_td(spec)
        return 2.0, f, spec.fixed_point, {"eta_lambda_min": spec.td.eta}
    _, fq = eval_F_f_q(spec)
    shape = spec.mdp.reward.shape
    d = spec.chain.d_pi
    gp = pseudo_contraction_modulus(spec.mdp, spec.behavior_policy, d, spec.q_star,
                                    samples=config.assumption_samples, seed=config.assumption_seed)
    extra = {"gamma_prime": gp,
             "gamma_prime_bound": pseudo_contraction_bound(spec.mdp, spec.behavior_policy, d)}
    if gp < 1.0:
        p, eta = choose_p_for_q(shape[0] * shape[1], gp)
        extra["eta_choose_p"] = eta
    else:
        p = 2.0
    return p, (lambda x: fq(x.reshape(shape)).ravel()), spec.q_star.ravel(), extra


def basic_assumption_report(config: ExperimentConfig,
                            drift_floor: float = DRIFT_FLOOR) -> tuple[float, AssumptionReport]:
    """Drift, smoothness and norm constants plus a Lipschitz fit of f."""
    p, f, x_star, extra = _lyapunov_setup(config)
    rep = check_lyapunov_conditions(LyapunovP(p), f, x_star, config.assumption_samples,
                                    config.assumption_seed, tol=drift_floor, raise_on_violation=False)
    rep.lipschitz_L = fit_lipschitz(f, x_star, config.assumption_samples, config.assumption_seed)
    if rep.drift_eta is not None:
        rep.extras["drift_eta_half"] = rep.drift_eta / 2.0
    rep.extras.update(extra)
    return p, rep


def full_assumption_report(config: ExperimentConfig, count_M: int = 100, seed=None,
                           mc_samples: int = 10_000, drift_floor: float = DRIFT_FLOOR) -> AssumptionReport:
    """Basic report plus skeleton noise growth constants and the martingale-difference check.

    Markovian experiments use anchors t_m = ceil(m^a) (needs nu in (2/3, 1));
    i.i.d. experiments use t_m = m and the stationary law as a kernel with
    identical rows.
    """
    _, rep = basic_assumption_report(config, drift_floor)
    spec = config.problem
    seed = config.seeds[0] if seed is None else parse_seed(seed)
    iid = config.experiment.endswith("iid")
    if isinstance(spec, LinearTdSpec):
        G, g = td_noise_functions(spec)
        law = pair_law(spec.chain)
        K = StochasticMatrix(np.tile(law, (law.size, 1))) if iid else augmented_td_kernel(spec.chain)
    else:
        G, g = q_noise_functions(spec)
        law = triple_law(spec.mdp, spec.behavior_policy, spec.chain.d_pi)
        K = (StochasticMatrix(np.tile(law, (law.size, 1))) if iid
             else augmented_q_kernel(spec.mdp, spec.behavior_policy, check=False))
    if iid:
        anchors = AnchorSequence.from_times(range(count_M + 1), spec.schedule)
    else:
        anchors = build_anchors(spec.schedule, count_M)
    T = anchors.anchors[-1]
    sub = ExperimentConfig(config.experiment, spec, (seed, seed), T, config.thresholds,
                           config.num_checkpoints, config.experiment_id, config.init_dist)
    draw = _td_sampler(sub, iid) if isinstance(spec, LinearTdSpec) else _q_sampler(sub, iid, False)
    path = draw(seed)
    trace = run_iterates(spec, path, range(T + 1))
    dec = decompose_noise(trace.iterates, path, anchors, G, g, K, spec.schedule)
    try:
        rep.growth_C1_C2 = check_noise_growth(dec)
    except GrowthViolated:
        rep.growth_C1_C2 = (float("inf"), float("inf"))
    mds = check_mds(dec, K, G, mc_samples=mc_samples, seed=seed)
    rep.mds_max_violation = mds.analytic_violation
    rep.extras.update({
        "anchors_M": count_M,
        "anchor_horizon": T,
        "reconstruction_residual": dec.reconstruction_residual,
        "mds_mc_max_z": mds.mc_max_z,
        "mds_passed": mds.passed,
    })
    return rep


# ------------------------------------------------------------------ runners

def _check_markov_schedule(schedule: StepSchedule) -> None:
    if schedule.family == "inv_poly":
        if not (2.0 / 3.0 < schedule.nu < 1.0):
            raise NuOutOfRange(f"Markovian sampling needs nu in (2/3, 1) for inv_poly steps, got nu={schedule.nu!r}")
    elif robbins_monro_class(schedule) is not RMClass.SATISFIES:
        raise ScheduleNotRobbinsMonro(f"schedule {schedule.name()} is not Robbins-Monro")


def _check_iid_schedule(schedule: StepSchedule) -> None:
    cls = robbins_monro_class(schedule)
    if cls is not RMClass.SATISFIES:
        raise ScheduleNotRobbinsMonro(f"schedule {schedule.name()} classified as {cls.value}")


def _run(config: ExperimentConfig, draw, jobs: int | None, diagnostics=(), visited=None) -> ConvergenceReport:
    spec = config.problem
    cps = checkpoint_grid(config.horizon, config.num_checkpoints)
    p, rep = basic_assumption_report(config)
    lp = LyapunovP(p)
    ref = spec.fixed_point

    def one(seed):
        path = draw(seed)
        tr = run_iterates(spec, path, cps)
        phi = np.array([phi_value(lp, (it - ref).ravel()) for it in tr.iterates])
        return tr.errors, phi, path

    jobs = jobs or os.cpu_count() or 1
    uniq = list(dict.fromkeys(config.seeds))
    if jobs > 1 and len(uniq) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = dict(zip(uniq, ex.map(one, uniq)))
    else:
        results = {s: one(s) for s in uniq}
    errors = np.stack([results[s][0] for s in config.seeds])
    phis = np.stack([results[s][1] for s in config.seeds])
    diags = list(diagnostics)
    verdict = convergence_verdict(cps, errors, config.thresholds)
    if visited is not None:
        nS, nA = spec.mdp.reward.shape
        seen = np.zeros(nS * nA, dtype=bool)
        for s in uniq:
            y = results[s][2][1:]
            seen[np.unique(y // nS)] = True
        missing = [divmod(int(i), nA) for i in np.flatnonzero(~seen)]
        if missing:
            diags.append("unvisited state-action pairs: " + " ".join(f"({s},{a})" for s, a in missing))
            if verdict is Verdict.CONVERGED:
                verdict = Verdict.INCONCLUSIVE
    if cps.size < 2:
        diags.append("horizon 0: only the initial error is available")
    return ConvergenceReport(config.experiment_id, config.experiment, config.seeds, cps, errors, phis,
                             verdict, config.thresholds, ref, p, rep, tuple(diags))


def run_td_markov(config: ExperimentConfig, jobs: int | None = None) -> ConvergenceReport:
    spec = config.problem
    _check_markov_schedule(spec.schedule)
    if spec.strict:
        spec.features.check_rank()
    return _run(config, _td_sampler(config, iid=False), jobs)


def run_td_iid(config: ExperimentConfig, jobs: int | None = None) -> ConvergenceReport:
    spec = config.problem
    _check_iid_schedule(spec.schedule)
    if spec.strict:
        spec.features.check_rank()
    return _run(config, _td_sampler(config, iid=True), jobs)


def _zero_weight_pairs(spec: QLearningSpec) -> list:
    w = occupancy(spec.behavior_policy, spec.chain.d_pi)
    return [tuple(int(v) for v in ix) for ix in np.argwhere(w <= 0.0)]


def run_q_markov(config: ExperimentConfig, jobs: int | None = None) -> ConvergenceReport:
    spec = config.problem
    _check_markov_schedule(spec.schedule)
    zero = _zero_weight_pairs(spec)
    diags = []
    if zero:
        diags.append("behavior policy never selects: " + " ".join(f"({s},{a})" for s, a in zero))
    return _run(config, _q_sampler(config, iid=False, check=not zero), jobs, diags, visited=True)


def run_q_iid(config: ExperimentConfig, jobs: int | None = None) -> ConvergenceReport:
    _check_iid_schedule(config.problem.schedule)
    zero = _zero_weight_pairs(config.problem)
    diags = ["behavior policy never selects: " + " ".join(f"({s},{a})" for s, a in zero)] if zero else []
    return _run(config, _q_sampler(config, iid=True, check=False), jobs, diags, visited=True)


RUNNERS = {"td-markov": run_td_markov, "td-iid": run_td_iid, "q-markov": run_q_markov, "q-iid": run_q_iid}


def run_experiment(config: ExperimentConfig, jobs: int | None = None) -> ConvergenceReport:
    return RUNNERS[config.experiment](config, jobs)


__all__ = [
    "EXPERIMENTS", "EXIT_CODES", "ConvergenceReport", "ExperimentConfig", "NotErgodic", "Thresholds",
    "Verdict", "basic_assumption_report", "checkpoint_grid", "convergence_verdict",
    "full_assumption_report", "run_experiment", "run_q_iid", "run_q_markov", "run_td_iid",
    "run_td_markov", "seed_passes", "write_trace_csv",
]
