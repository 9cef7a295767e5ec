"""Command line entry point: ``flowsim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import random
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import verify
from .cost import ar_bytes
from .io import ExperimentSpec, SpecError, export_trace, format_rows, load_spec
from .metrics import iteration_time, pending_gradient_peak
from .model import ConfigError, ModelConfig, check
from .presets import DEFAULT_P, model_preset, profile_preset
from .schedule import ABLATION_ORDER, Policy
from .tuner import BOState, bo_tune, grid_tune, random_tune

log = logging.getLogger("flowsim")


class CliError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("FLOWSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


# -- spec resolution ---------------------------------------------------------


def resolve_spec(args) -> ExperimentSpec:
    """Spec file (if any) with command line flags layered on top."""
    if args.spec:
        spec = load_spec(args.spec)
    else:
        model = model_preset(args.model or _DEFAULT_MODEL, P=args.P or DEFAULT_P)
        profile = profile_preset(args.profile or _DEFAULT_PROFILE)
        spec = ExperimentSpec(model, profile, tuple(ABLATION_ORDER))
    model, r_values = spec.model, spec.r_values
    if args.spec and (args.model or args.P):
        if args.model:
            model = model_preset(args.model, P=args.P or model.P)
            r_values = (model.R,)
        else:
            model = model.replace(P=args.P, E=model.E // model.P * args.P)
    profile = profile_preset(args.profile) if args.spec and args.profile else spec.profile
    policies = tuple(Policy(p.upper()) for p in args.policy) if args.policy else spec.policies
    if args.r:
        r_values = tuple(args.r)
    sp: Any = spec.sp
    if args.sp is not None:
        sp = "auto" if args.sp == "auto" else _parse_bytes(args.sp)
        if sp == "auto" and not any(p.chunks_ar for p in policies):
            raise CliError("--sp auto needs a policy with chunked all-reduce")
    seed = spec.seed if args.seed is None else args.seed
    outputs = dict(spec.outputs)
    if args.trace:
        outputs["trace"] = args.trace
    for r in r_values:
        check(model.replace(R=r))
    return ExperimentSpec(model, profile, policies, r_values, sp, seed, outputs)


def _parse_bytes(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise CliError(f"--sp takes a byte count or 'auto', got {text!r}") from None
    if not value >= 1 or value != int(value):
        raise CliError(f"--sp must be a positive whole number of bytes, got {text!r}")
    return int(value)


def chunk_size(spec: ExperimentSpec, config: ModelConfig, seed_offset: int = 0) -> float:
    """The spec's S_p, tuning it with BO against FLOWMOE when set to auto."""
    if spec.sp != "auto":
        return float(spec.sp)
    hi = ar_bytes(config)
    res = bo_tune(lambda x: verify.t_iter(config, Policy.FLOWMOE, spec.profile, x), BOState(0.0, hi),
                  seed=spec.seed + seed_offset)
    log.info("tuned S_p=%.0f bytes (%.3f us) for R=%d", res.best_sp, res.best_time, config.R)
    return res.best_sp


# -- subcommands -------------------------------------------------------------


def cmd_simulate(spec: ExperimentSpec, args) -> List[Dict[str, Any]]:
    rows = []
    for cfg in spec.configs():
        sp = chunk_size(spec, cfg) if any(p.chunks_ar for p in spec.policies) else None
        for pol in spec.policies:
            tl = verify.run(cfg, pol, spec.profile, sp if pol.chunks_ar else None)
            t_f, t_b, t_iter = iteration_time(tl)
            rows.append({
                "policy": pol.value,
                "R": cfg.R,
                "sp_bytes": int(round(sp)) if pol.chunks_ar else "",
                "T_f_ms": t_f / 1e3,
                "T_b_ms": t_b / 1e3,
                "T_iter_ms": t_iter / 1e3,
            })
            trace = spec.outputs.get("trace")
            if trace:
                path = Path(trace)
                if len(spec.policies) > 1 or len(spec.r_values) > 1:
                    path = path.with_name(f"{path.stem}.{pol.value}.R{cfg.R}{path.suffix}")
                export_trace(tl, path, all_workers=args.all_workers)
                log.info("wrote %s", path)
    return rows


def cmd_ablate(spec: ExperimentSpec, args) -> List[Dict[str, Any]]:
    rows = []
    for cfg in spec.configs():
        sp = chunk_size(spec, cfg)
        times = {p: verify.t_iter(cfg, p, spec.profile, sp if p.chunks_ar else None) for p in ABLATION_ORDER}
        base = times[Policy.VANILLA_EP]
        for p in ABLATION_ORDER:
            rows.append({
                "policy": p.value,
                "R": cfg.R,
                "time_ms": times[p] / 1e3,
                "speedup": f"{base / times[p]:.2f}",
            })
    return rows


def cmd_sweep_sp(spec: ExperimentSpec, args) -> List[Dict[str, Any]]:
    rows = []
    policies = [p for p in spec.policies if p.chunks_ar] or [Policy.FLOWMOE]
    for cfg in spec.configs():
        sizes = verify.halving_ladder(cfg, args.steps)
        for pol in policies:
            rep = verify.sp_sweep(cfg, spec.profile, sizes, pol)
            for s, t in zip(rep.sizes, rep.times):
                rows.append({"policy": pol.value, "R": cfg.R, "sp_bytes": int(round(s)), "T_iter_ms": t / 1e3})
    return rows


def cmd_tune(spec: ExperimentSpec, args) -> List[Dict[str, Any]]:
    rows = []
    for cfg in spec.configs():
        objective = _cached(lambda x: verify.t_iter(cfg, Policy.FLOWMOE, spec.profile, x))
        hi = ar_bytes(cfg)
        res = bo_tune(objective, BOState(0.0, hi, budget=args.budget), seed=spec.seed)
        for row in res.log:
            rows.append({
                "tuner": "bo",
                "R": cfg.R,
                "round": row.round,
                "sp_bytes": int(round(row.sp_bytes)),
                "T_iter_ms": row.observed_us / 1e3,
                "best_ms": row.incumbent_us / 1e3,
            })
        if args.grid:
            x, y = grid_tune(objective, BOState(0.0, hi), points=args.budget)
            rows.append({"tuner": "grid", "R": cfg.R, "round": args.budget, "sp_bytes": int(round(x)),
                         "T_iter_ms": y / 1e3, "best_ms": y / 1e3})
        if args.random:
            x, y = random_tune(objective, BOState(0.0, hi), draws=args.budget, seed=spec.seed)
            rows.append({"tuner": "random", "R": cfg.R, "round": args.budget, "sp_bytes": int(round(x)),
                         "T_iter_ms": y / 1e3, "best_ms": y / 1e3})
    return rows


def _cached(fn: Callable[[float], float]) -> Callable[[float], float]:
    memo: Dict[float, float] = {}

    def wrapped(x: float) -> float:
        if x not in memo:
            memo[x] = fn(x)
        return memo[x]

    return wrapped


def cmd_verify(spec: Optional[ExperimentSpec], args) -> List[Dict[str, Any]]:
    return verify_suites(seeds=args.seeds)


def verify_suites(seeds: int = 100) -> List[Dict[str, Any]]:
    """Run every check on the shipped seeds; one row per suite."""
    seed_list = verify.SWEEP_SEEDS[:seeds]
    rows = []

    def add(name, ok, detail):
        rows.append({"suite": name, "ok": "pass" if ok else "FAIL", "detail": detail})

    n_ins = bad = strict = 0
    for s in seed_list:
        rng = random.Random(s)
        cfg = verify.random_config(rng)
        rep = verify.theorem1_check(cfg, verify.random_profile(rng))
        n_ins += len(rep.evaluated)
        bad += not rep.all_leq
        strict += rep.any_strict
    add("early-allreduce", bad == 0 and strict > 0, f"{n_ins} insertions, {bad} configs worse, {strict} strictly better")

    bad = 0
    for s in seed_list:
        rng = random.Random(s)
        rep = verify.theorem2_sweep(verify.random_config(rng), verify.random_profile(rng, alpha_ar_us=0.0))
        bad += not rep.non_increasing
    add("chunk-ladder", bad == 0, f"{len(seed_list)} ladders, {bad} not monotone")

    worst = max(verify.microbatch_equivalence(B, R, seed=i) for i, (B, R) in enumerate([(8, 1), (8, 2), (8, 4), (16, 8)]))
    add("microbatch", worst <= 1e-12, f"max relative deviation {worst:.2e}")

    fails = []
    for name in ("ablation-layer", "bert-large-moe"):
        cfg = model_preset(name)
        for rep in verify.regime_check(cfg, profile_preset("comm-dominated"), profile_preset("compute-dominated"),
                                       profile_preset("balanced")):
            fails += [f"{name}/{rep.name}: {k}" for k, v in rep.checks.items() if not v]
    add("regimes", not fails, "; ".join(fails) or "all bounds hold")

    worse = strict_missing = 0
    for s in seed_list:
        rng = random.Random(s)
        cfg, prof = verify.random_config(rng), verify.random_profile(rng)
        sp = ar_bytes(cfg) / rng.choice([1, 2, 4, 8])
        ours = pending_gradient_peak(verify.run(cfg, Policy.FLOWMOE, prof, sp))
        base = pending_gradient_peak(verify.run(cfg, Policy.VANILLA_EP, prof))
        worse += ours > base
        strict_missing += ours == base and not verify.comm_saturated(cfg, prof, sp)
    add("memory", worse == 0 and strict_missing == 0,
        f"{worse} configs hold more gradient, {strict_missing} unsaturated configs without a saving")

    fails = []
    for row in verify.straggler_check(model_preset("ablation-layer"), profile_preset("balanced")):
        if not (row.matches_slowest and row.flowmoe_fastest):
            fails.append(f"factor {row.slow_factor}")
    add("straggler", not fails, "; ".join(fails) or "slowest worker sets the pace")
    return rows


COMMANDS = {
    "simulate": cmd_simulate,
    "ablate": cmd_ablate,
    "sweep-sp": cmd_sweep_sp,
    "tune": cmd_tune,
    "verify": cmd_verify,
}

_DEFAULT_MODEL = "ablation-layer"
_DEFAULT_PROFILE = "balanced"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="experiment YAML file")
    common.add_argument("--model", help=f"model preset (default: {_DEFAULT_MODEL})")
    common.add_argument("--profile", help=f"hardware profile preset (default: {_DEFAULT_PROFILE})")
    common.add_argument("--P", type=int, help="number of workers")
    common.add_argument("--policy", action="append", help="policy name; repeat for several")
    common.add_argument("--r", type=int, action="append", help="pipelining degree; repeat for several")
    common.add_argument("--sp", help="AR chunk size in bytes, or 'auto'")
    common.add_argument("--seed", type=int)
    common.add_argument("--trace", help="write a Chrome trace JSON here")
    common.add_argument("--all-workers", action="store_true", help="trace every worker, not only worker 0")
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--output", help="also write the report to this file")

    parser = argparse.ArgumentParser(prog="flowsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="iteration times per policy and R")
    sub.add_parser("ablate", parents=[common], help="speedup of each policy over VANILLA_EP")
    p = sub.add_parser("sweep-sp", parents=[common], help="iteration time along a halving S_p ladder")
    p.add_argument("--steps", type=int, default=10)
    p = sub.add_parser("tune", parents=[common], help="Bayesian optimization of S_p")
    p.add_argument("--budget", type=int, default=8)
    p.add_argument("--grid", action="store_true", help="add the grid search baseline")
    p.add_argument("--random", action="store_true", help="add the random search baseline")
    p = sub.add_parser("verify", parents=[common], help="run the property suites on shipped seeds")
    p.add_argument("--seeds", type=int, default=100)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        spec = None if args.command == "verify" else resolve_spec(args)
        rows = COMMANDS[args.command](spec, args)
    except (SpecError, ConfigError, CliError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"flowsim {args.command}: error: {msg}", file=sys.stderr)
        return 2
    text = format_rows(rows, args.format)
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    if args.command == "verify" and any(r["ok"] != "pass" for r in rows):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
