"""Command-line entry point: ``python -m lowrank.harness <command> [flags]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..certificates import (
    RIP_LIMIT,
    golfing_construct,
    putting,
    rip_on_tangent,
    validate_approx_certificate,
    validate_exact_certificate,
)
from ..geometry import SvdFactors, TangentSpace
from .config import ExperimentConfig, load_config
from .estimates import estimate_rows
from .sweeps import (
    SweepResult,
    certification_sweep,
    noise_sweep,
    phase_transition_sweep,
    write_csv,
)
from .trials import make_instance, run_trial, trial_seed

COMMANDS = ("trial", "sweep-transition", "sweep-noise", "sweep-certify", "certify", "estimate")
EXPERIMENT_OF = {"trial": "trial", "sweep-transition": "transition", "sweep-noise": "noise",
                 "sweep-certify": "certify", "certify": "certify", "estimate": "estimate"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowrank", description="Low-rank recovery experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="flat key-value config file (TOML subset)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
    p.add_argument("--threads", type=int, help="worker processes for sweeps")
    p.add_argument("--trace", type=Path,
                   help="solver trace CSV (trial) or per-leg golfing residuals (certify)")
    p.add_argument("--trial", type=int, default=0, help="trial index for trial/certify")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {"experiment": EXPERIMENT_OF[args.command]}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.out is not None:
        changes["out"] = str(args.out)
    if args.trace is not None:
        changes["trace"] = str(args.trace)
    return cfg.replace(**changes)


def _emit(result: SweepResult, cfg: ExperimentConfig, out):
    if cfg.out:
        write_csv(result, cfg.out)
        print(f"wrote {cfg.out}", file=sys.stderr)
    else:
        write_csv(result, out)


def cmd_trial(cfg: ExperimentConfig, trial: int, out) -> int:
    cell = cfg.cells()[0]
    rec = run_trial(cfg, cell, trial, 0, trace_path=cfg.trace or None)
    for k, v in rec.row().items():
        print(f"{k} = {v}", file=out)
    return 0 if not rec.status.startswith("error") else 1


def cmd_certify(cfg: ExperimentConfig, trial: int, out) -> int:
    cell = cfg.cells()[0]
    inst = make_instance(cfg, cell, trial, trial_seed(cfg, 0, trial))
    if inst.anchor is None or inst.op.kind not in ("gaussian", "completion"):
        print("certify needs a gaussian or completion ensemble", file=sys.stderr)
        return 2
    F = inst.anchor
    anchor = SvdFactors(F.U, np.ones(F.rank), F.V)
    op = inst.op if inst.op.kind == "completion" else inst.op.scaled(1.0 / np.sqrt(inst.op.m))
    rip = rip_on_tangent(op, TangentSpace(anchor))
    tr = golfing_construct(op, anchor, cfg.Q_legs or None, trial)
    rep = validate_approx_certificate(tr.z, op, anchor)
    if cfg.trace:
        tr.to_csv(cfg.trace)
    lines = [f"legs = {tr.legs}", "alphas = " + " ".join(f"{a:.6g}" for a in tr.alphas),
             f"delta = {rip.delta:.6g}", f"z_norm = {rep.z_norm:.6g}",
             f"alpha = {rep.alpha:.6g} (bound {rep.alpha_bound:.6g})",
             f"offtangent_norm = {rep.offtangent_norm:.6g}", f"approx_ok = {rep.passes}"]
    ok = rep.passes
    if rip.delta < RIP_LIMIT:
        cert = putting(tr.z, op, anchor, rip)
        valid = validate_exact_certificate(cert, op, anchor, rip)
        lines += [f"putting_x_norm = {cert.x_norm:.6g} (bound {cert.x_bound:.6g})",
                  f"exact_tangent_residual = {cert.tangent_residual:.3e}",
                  f"exact_offtangent_norm = {cert.offtangent_norm:.6g}", f"exact_ok = {valid}"]
        ok = valid
    else:
        lines.append("exact_ok = False (delta >= 3/4)")
    print("\n".join(lines), file=out)
    return 0 if ok else 1


def cmd_estimate(cfg: ExperimentConfig, out) -> int:
    _emit(SweepResult(cfg, [], extra_rows=estimate_rows(cfg)), cfg, out)
    return 0


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "trial":
        return cmd_trial(cfg, args.trial, out)
    if args.command == "certify":
        return cmd_certify(cfg, args.trial, out)
    if args.command == "estimate":
        return cmd_estimate(cfg, out)
    try:
        sweep = {"sweep-transition": phase_transition_sweep, "sweep-noise": noise_sweep,
                 "sweep-certify": certification_sweep}[args.command]
        res = sweep(cfg)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    _emit(res, cfg, out)
    return 0


__all__ = ["main", "build_parser"]
