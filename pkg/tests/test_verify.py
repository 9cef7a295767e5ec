import random

import pytest

from flowsim.cost import ar_bytes
from flowsim.metrics import pending_gradient_peak
from flowsim.model import ModelConfig
from flowsim.presets import model_preset, profile_preset
from flowsim.schedule import Policy
from flowsim.verify import (
    SWEEP_SEEDS,
    comm_saturated,
    dominance_checks,
    halving_ladder,
    microbatch_equivalence,
    random_config,
    random_profile,
    regime_check,
    run,
    sp_sweep,
    straggler_check,
    t_iter,
    theorem1_check,
    theorem2_sweep,
)

from helpers import fixed_profile, small_config


# -- insertion of a whole-block all-reduce -----------------------------------


def test_insertion_of_zero_allreduce_changes_nothing():
    rep = theorem1_check(small_config(L=3, R=3, N=96), fixed_profile(at=10, exp=7, a2a=5, ar=0))
    assert rep.evaluated and all(i.T_b == rep.T_b_star for i in rep.evaluated)


def test_insertion_strict_improvement():
    # attention leaves the comm lane idle much longer than one all-reduce
    rep = theorem1_check(small_config(L=3), fixed_profile(at=50, exp=5, a2a=20, ar=30))
    assert rep.all_leq and rep.any_strict


def test_insertion_never_worse_random():
    for seed in SWEEP_SEEDS[:20]:
        rng = random.Random(seed)
        rep = theorem1_check(random_config(rng), random_profile(rng))
        assert rep.all_leq, seed


def test_insertion_skips_unready_slots():
    rep = theorem1_check(small_config(L=2), fixed_profile(at=50, exp=5, a2a=1, ar=30))
    assert any(i.skipped for i in rep.insertions)
    assert all(i.T_b is None for i in rep.insertions if i.skipped)


def test_insertion_needs_two_blocks():
    with pytest.raises(ValueError):
        theorem1_check(small_config(L=1), fixed_profile(at=1))


# -- chunk size sweeps -------------------------------------------------------


def test_single_chunk_vs_fine_chunks():
    c = small_config(L=3)
    p = fixed_profile(at=50, exp=5, a2a=20, ar=60)
    whole = ar_bytes(c)
    assert t_iter(c, Policy.FLOWMOE, p, whole / 64) <= t_iter(c, Policy.FLOWMOE, p, whole)


def test_ladder_monotone_random():
    for seed in SWEEP_SEEDS[:15]:
        rng = random.Random(seed)
        rep = theorem2_sweep(random_config(rng), random_profile(rng, alpha_ar_us=0.0))
        assert rep.non_increasing and rep.min_at_smallest, seed


def test_startup_latency_creates_interior_minimum():
    c = small_config(L=3)
    p = fixed_profile(at=50, exp=5, a2a=20, ar=60, alpha_ar=5.0)
    rep = sp_sweep(c, p, halving_ladder(c))
    assert rep.interior_minimum and not rep.non_increasing


def test_ladder_preconditions():
    c = small_config()
    with pytest.raises(ValueError):
        theorem2_sweep(c, fixed_profile(at=1, ar=1, alpha_ar=1.0))
    with pytest.raises(ValueError):
        theorem2_sweep(c, fixed_profile(at=1, ar=1), [10.0, 20.0])


def test_halving_ladder():
    c = small_config()
    ladder = halving_ladder(c, 10)
    assert len(ladder) == 11 and ladder[0] == ar_bytes(c) and ladder[-1] == ar_bytes(c) / 1024


# -- gradient accumulation identity ------------------------------------------


def test_microbatch_identity():
    assert microbatch_equivalence(8, 1) == 0.0
    for B, R in [(8, 2), (8, 4), (16, 8)]:
        assert microbatch_equivalence(B, R) <= 1e-12


def test_microbatch_unscaled_is_off_by_r():
    for R in (2, 4, 8):
        assert microbatch_equivalence(16, R, scaled=False) == pytest.approx(R - 1, rel=1e-9)


def test_microbatch_rejects_uneven_split():
    with pytest.raises(ValueError):
        microbatch_equivalence(6, 4)


# -- performance regimes -----------------------------------------------------


def test_regimes_ablation_layer():
    reps = regime_check(
        model_preset("ablation-layer"),
        profile_preset("comm-dominated"),
        profile_preset("compute-dominated"),
        profile_preset("balanced"),
    )
    for rep in reps:
        assert rep.ok, (rep.name, rep.checks)


def test_dominance_checks_flag_bad_order():
    t = dict(FLOWMOE=3.0, FLOWMOE_AR=2.0, FLOWMOE_AT=4.0, PIPE_MOE=5.0, VANILLA_EP=6.0)
    assert dominance_checks(t) == {
        "flowmoe < flowmoe_at": True,
        "flowmoe_at < pipe_moe": True,
        "pipe_moe < vanilla": True,
        "flowmoe <= flowmoe_ar": False,
    }


# -- gradient memory ---------------------------------------------------------


def test_memory_proxy_random():
    for seed in SWEEP_SEEDS[:30]:
        rng = random.Random(seed)
        c, p = random_config(rng), random_profile(rng)
        sp = ar_bytes(c) / 4
        flow = pending_gradient_peak(run(c, Policy.FLOWMOE, p, sp))
        vanilla = pending_gradient_peak(run(c, Policy.VANILLA_EP, p))
        assert flow <= vanilla
        if not comm_saturated(c, p, sp):
            assert flow < vanilla, seed


def test_comm_saturated_examples():
    c = small_config(L=3)
    # long attention leaves room for a chunk
    assert not comm_saturated(c, fixed_profile(at=50, exp=5, a2a=20, ar=30), ar_bytes(c))
    # compute never pauses the A2A lane long enough
    assert comm_saturated(c, fixed_profile(at=1, exp=1, a2a=40, ar=30), ar_bytes(c))


# -- stragglers --------------------------------------------------------------


def test_straggler_matches_slowest():
    c = model_preset("ablation-layer", P=4)
    rows = straggler_check(c, profile_preset("balanced"), (1.0, 1.5, 2.0, 4.0))
    for row in rows:
        assert row.matches_slowest and row.flowmoe_fastest, row.slow_factor
    base = {pol.value: t_iter(c, pol, profile_preset("balanced")) for pol in Policy}
    assert rows[0].homo == {k: v for k, v in base.items() if k in rows[0].homo}


# -- randomized inputs -------------------------------------------------------


def test_random_config_is_valid_and_seeded():
    for seed in range(50):
        a = random_config(random.Random(seed))
        assert isinstance(a, ModelConfig) and (a.B * a.N) % a.R == 0
        assert a == random_config(random.Random(seed))
