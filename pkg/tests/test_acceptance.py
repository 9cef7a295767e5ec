"""End-to-end acceptance checks; each records a PASS/FAIL line for the summary."""

import random
import subprocess
import sys
import time
from pathlib import Path


from flowsim.cost import ar_bytes
from flowsim.metrics import pending_gradient_peak
from flowsim.presets import MODEL_NAMES, MODEL_TABLE, model_preset, profile_preset
from flowsim.schedule import ABLATION_ORDER, Policy
from flowsim.tuner import BOState, bo_tune, grid_tune, random_tune
from flowsim.verify import (
    SWEEP_SEEDS,
    comm_saturated,
    halving_ladder,
    microbatch_equivalence,
    random_config,
    random_profile,
    regime_check,
    run,
    sp_sweep,
    t_iter,
    theorem1_check,
    theorem2_sweep,
)

from helpers import fixed_profile, small_config

HERE = Path(__file__).parent

# Speedups over VANILLA_EP reported for the ablation layer.
ABLATION_TARGETS = {"PIPE_MOE": 1.46, "FLOWMOE_AT": 1.61, "FLOWMOE_AR": 1.68, "FLOWMOE": 2.05}


def test_1_whole_block_insertion(verdict):
    t0 = time.perf_counter()
    configs = worse = insertions = 0
    P_seen, L_seen, R_seen = set(), set(), set()
    for seed in SWEEP_SEEDS:
        rng = random.Random(seed)
        cfg = random_config(rng)
        rep = theorem1_check(cfg, random_profile(rng))
        configs += 1
        insertions += len(rep.evaluated)
        worse += not rep.all_leq
        P_seen.add(cfg.P), L_seen.add(cfg.L), R_seen.add(cfg.R)
    strict = theorem1_check(small_config(L=3), fixed_profile(at=50, exp=5, a2a=20, ar=30))
    elapsed = time.perf_counter() - t0
    ok = (worse == 0 and configs >= 100 and strict.all_leq and strict.any_strict
          and P_seen == {2, 4, 8, 16} and L_seen == {2, 3, 4} and R_seen == {1, 2, 3, 4} and elapsed < 60)
    verdict(1, ok, f"{configs} configs, {insertions} insertions, {worse} worse than centralized; "
                   f"constructed case {strict.T_b_star:.1f} -> {min(i.T_b for i in strict.evaluated):.1f} us; "
                   f"{elapsed:.1f} s")
    assert ok


def test_2_chunk_size_ladder(verdict):
    t0 = time.perf_counter()
    monotone = interior = 0
    seeds = SWEEP_SEEDS[:60]
    for seed in seeds:
        rng = random.Random(seed)
        cfg = random_config(rng)
        prof = random_profile(rng, alpha_ar_us=0.0)
        sizes = halving_ladder(cfg, 10)
        rep = theorem2_sweep(cfg, prof, sizes)
        monotone += rep.non_increasing and rep.min_at_smallest and len(sizes) == 11
        lat = sp_sweep(cfg, prof.replace(alpha_ar_us=rng.uniform(5.0, 100.0)), sizes)
        interior += lat.interior_minimum
    elapsed = time.perf_counter() - t0
    ok = monotone == len(seeds) and interior == len(seeds) and elapsed < 60
    verdict(2, ok, f"no startup cost: {monotone}/{len(seeds)} ladders non-increasing; "
                   f"with startup cost: {interior}/{len(seeds)} interior minima; {elapsed:.1f} s")
    assert ok


def test_3_ablation_ordering(verdict):
    cfg = model_preset("ablation-layer")
    prof = profile_preset("balanced")
    hi = ar_bytes(cfg)
    sp = bo_tune(lambda x: t_iter(cfg, Policy.FLOWMOE, prof, x), BOState(0.0, hi), seed=0).best_sp
    times = {p.value: t_iter(cfg, p, prof, sp if p.chunks_ar else None) for p in ABLATION_ORDER}
    speed = {k: times["VANILLA_EP"] / v for k, v in times.items()}
    ok = (speed["FLOWMOE"] > speed["FLOWMOE_AR"] > speed["FLOWMOE_AT"] > speed["PIPE_MOE"] > 1.0
          and speed["FLOWMOE"] >= 1.5)
    err = {k: abs(speed[k] / t - 1.0) for k, t in ABLATION_TARGETS.items()}
    shown = ", ".join(f"{k} {speed[k]:.2f}x (target {ABLATION_TARGETS[k]:.2f}, {err[k]:.0%} off)"
                      for k in ABLATION_TARGETS)
    verdict(3, ok, f"{shown}; all within 25%: {max(err.values()) <= 0.25}; S_p={sp:.0f} B")
    assert ok


def _cached(fn):
    memo = {}

    def wrapped(x):
        if x not in memo:
            memo[x] = fn(x)
        return memo[x]

    return wrapped


def test_4_tuner_quality(verdict):
    t0 = time.perf_counter()
    prof = profile_preset("cluster1")
    parts, ok = [], True
    for name in MODEL_TABLE:
        cfg = model_preset(name)
        hi = ar_bytes(cfg)
        f = _cached(lambda x, cfg=cfg: t_iter(cfg, Policy.FLOWMOE, prof, x))
        best = min(f(hi * i / 200) for i in range(1, 201))
        grid = grid_tune(f, BOState(0.0, hi))[1]
        close = ordered = 0
        for seed in range(20):
            bo = bo_tune(f, BOState(0.0, hi), seed=seed).best_time
            rnd = random_tune(f, BOState(0.0, hi), draws=8, seed=seed)[1]
            close += bo <= 1.05 * best
            ordered += bo <= grid <= rnd
        ok &= close >= 18 and ordered >= 16
        parts.append(f"{name} {close}/20 near, {ordered}/20 ordered")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    verdict(4, ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    assert ok


def test_5_microbatch_identity(verdict):
    t0 = time.perf_counter()
    scaled = {(B, R): microbatch_equivalence(B, R, seed=i) for i, (B, R) in enumerate([(8, 1), (8, 2), (8, 4), (16, 8)])}
    unscaled = {(B, R): microbatch_equivalence(B, R, seed=i, scaled=False) for i, (B, R) in enumerate([(8, 2), (8, 4), (16, 8)])}
    elapsed = time.perf_counter() - t0
    ok = max(scaled.values()) <= 1e-12 and min(unscaled.values()) >= 0.5 and elapsed < 1
    verdict(5, ok, f"max scaled deviation {max(scaled.values()):.1e}; "
                   f"min unscaled deviation {min(unscaled.values()):.2f}; {elapsed * 1e3:.0f} ms")
    assert ok


def test_6_regimes(verdict):
    t0 = time.perf_counter()
    worst_ratio, worst_slack, fails = 0.0, -1.0, []
    comm, compute, bal = (profile_preset(n) for n in ("comm-dominated", "compute-dominated", "balanced"))
    for name in MODEL_NAMES:
        reps = {r.name: r for r in regime_check(model_preset(name), comm, compute, bal)}
        c = reps["comm-dominated"].times
        worst_ratio = max(worst_ratio, abs(c["FLOWMOE"] / c["PIPE_MOE"] - 1.0))
        k = reps["compute-dominated"].times
        worst_slack = max(worst_slack, k["FLOWMOE"] / k["compute_plus_tail"] - 1.0)
        for rname in ("comm-dominated", "compute-dominated"):
            fails += [f"{name}/{rname}: {c_}" for c_, v in reps[rname].checks.items() if not v]
    elapsed = time.perf_counter() - t0
    ok = not fails and worst_ratio <= 1e-9 and worst_slack <= 0.01 and elapsed < 10
    verdict(6, ok, f"{len(MODEL_NAMES)} models; max |FLOWMOE/PIPE_MOE - 1| = {worst_ratio:.1e} (comm-dominated); "
                   f"max excess over compute + tail = {worst_slack:+.2%} (compute-dominated); {elapsed:.1f} s"
                   + (f"; failed: {fails}" if fails else ""))
    assert ok


def test_7_memory_proxy(verdict):
    t0 = time.perf_counter()
    worse = strict = equal_saturated = equal_unsaturated = 0
    for seed in SWEEP_SEEDS:
        rng = random.Random(seed)
        cfg, prof = random_config(rng), random_profile(rng)
        sp = ar_bytes(cfg) / rng.choice([1, 2, 4, 8])
        ours = pending_gradient_peak(run(cfg, Policy.FLOWMOE, prof, sp))
        base = pending_gradient_peak(run(cfg, Policy.VANILLA_EP, prof))
        worse += ours > base
        if ours < base:
            strict += 1
        elif ours == base:
            if comm_saturated(cfg, prof, sp):
                equal_saturated += 1
            else:
                equal_unsaturated += 1
    elapsed = time.perf_counter() - t0
    ok = worse == 0 and equal_unsaturated == 0 and elapsed < 30
    verdict(7, ok, f"{len(SWEEP_SEEDS)} configs: {worse} worse, {strict} strictly lower, "
                   f"{equal_saturated} equal with saturated comm, {equal_unsaturated} equal without; {elapsed:.1f} s")
    assert ok


GOLDEN_SCRIPT = """
import sys
sys.path.insert(0, {tests!r})
from test_io import golden_timeline
from flowsim.io import trace_json
sys.stdout.write(trace_json(golden_timeline()))
"""


def test_8_schedule_validity_and_determinism(verdict):
    from test_io import GOLDEN, golden_timeline
    from flowsim.io import trace_json

    golden = GOLDEN.read_text()
    here = trace_json(golden_timeline())
    fresh = subprocess.run([sys.executable, "-c", GOLDEN_SCRIPT.format(tests=str(HERE))],
                           capture_output=True, text=True, check=True).stdout
    ok = golden == here == fresh
    verdict(8, ok, f"golden trace byte-identical in process and in a fresh interpreter: {ok}")
    assert ok
