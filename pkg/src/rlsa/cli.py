"""Command-line entry point: ``rlsa {analyze-chain,run,check-assumptions,rs-demo}``."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import markov
from .algorithms import StepSchedule
from .config import build_experiment, read_config, with_seed_override
from .errors import RlsaError
from .harness import full_assumption_report, run_experiment, write_trace_csv
from .sa import robbins_siegmund_envelope
from .textio import format_kv, read_matrix

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    else:
        sys.stdout.write(text)


def chain_report(P, tol: float = 1e-12, horizon: int = 100) -> dict:
    """Key-value summary of the structural and quantitative chain analysis."""
    P = markov.validate_stochastic(P)
    irr, ape = markov.is_irreducible(P), markov.is_aperiodic(P)
    out = {"n": P.n, "irreducible": irr, "aperiodic": ape}
    cert = markov.doeblin_certificate(P)
    if cert is None:
        out["doeblin"] = "Absent"
    else:
        out["doeblin"] = "Present"
        out.update({f"doeblin.{k}": v for k, v in cert.as_dict().items()})
        out["contraction_factor"] = markov.contraction_factor(cert)
    if irr and ape:
        pi = markov.stationary_distribution(P, tol=tol)
        out["stationary"] = pi
        out["stationary_residual"] = float(np.abs(pi @ P.rows - pi).sum())
        mix = markov.mixing_certificate(P, horizon=horizon)
        out.update({"mixing.C": mix.prefactor_C, "mixing.rho": mix.rate_rho,
                    "mixing.horizon_checked": mix.horizon_checked})
    else:
        out["stationary"] = "n/a"
    return out


def cmd_analyze_chain(args) -> int:
    P = read_matrix(args.matrix)
    _emit(format_kv(chain_report(P, tol=args.tol if args.tol is not None else 1e-12)), args.out)
    return EXIT_OK


def _load(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg = with_seed_override(cfg, args.seed)
    return cfg


def cmd_run(args) -> int:
    if not args.out:
        raise RlsaError("run needs --out DIR")
    cfg = _load(args)
    exp = build_experiment(cfg)
    rep = run_experiment(exp, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        write_trace_csv(rep, fh)
    kv = rep.to_kv()
    kv["schedule"] = exp.schedule.name()
    (out / "report.txt").write_text(format_kv(kv))
    print(f"{rep.experiment_id}: {rep.verdict.value}")
    return rep.exit_code


def cmd_check_assumptions(args) -> int:
    cfg = _load(args)
    exp = build_experiment(cfg)
    tol = cfg.tolerances
    rep = full_assumption_report(exp, count_M=tol.anchors_M, mc_samples=tol.mds_mc_samples,
                                 drift_floor=args.tol if args.tol is not None else tol.drift_floor)
    kv = {"experiment": exp.experiment, **rep.to_kv()}
    _emit(format_kv(kv), args.out)
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_rs_demo(args) -> int:
    sched = StepSchedule.parse(args.schedule)
    final, trace = robbins_siegmund_envelope(args.z0, sched, args.C, args.steps)
    lines = "".join(f"{n} {z!r}\n" for n, z in enumerate(trace.tolist()))
    _emit(lines, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rlsa", description="Markov chain certification and "
                                 "stochastic-approximation convergence experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment TOML file")
            p.add_argument("--seed", help="replace the seed list by SEED, SEED+1, ... (decimal or 0x hex)")
        p.add_argument("--out", help="output path (directory for run)")
        p.add_argument("--jobs", type=int, default=None, help="per-seed worker threads (default: CPU count)")
        p.add_argument("--tol", type=float, default=None, help="numerical tolerance override")

    p = sub.add_parser("analyze-chain", help="certify a transition matrix file")
    p.add_argument("matrix", help="whitespace matrix file: first line n, then n rows")
    common(p, config=False)
    p.set_defaults(func=cmd_analyze_chain)

    p = sub.add_parser("run", help="run a multi-seed convergence experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-assumptions", help="fit and check the Lyapunov and noise assumptions")
    common(p)
    p.set_defaults(func=cmd_check_assumptions)

    p = sub.add_parser("rs-demo", help="iterate the Robbins-Siegmund envelope")
    p.add_argument("--z0", type=float, default=1.0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--schedule", default="inv_poly:1:2", help="T_n as inv_poly:NU:OFFSET or constant:C")
    common(p, config=False)
    p.set_defaults(func=cmd_rs_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
        args.jobs = os.cpu_count() or 1
    try:
        return args.func(args)
    except (RlsaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
