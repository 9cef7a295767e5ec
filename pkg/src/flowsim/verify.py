"""Executable checks of the scheduling results over the simulator."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cost import HardwareProfile, ar_bytes
from .engine import simulate
from .metrics import check_timeline, iteration_time
from .model import ModelConfig, Phase, TaskKind, Timeline
from .schedule import ABLATION_ORDER, Policy, build_graph, with_forced_comm

# Seeds for randomized sweeps; fixed so any failure can be replayed.
SWEEP_SEEDS = tuple(range(1000, 1100))


def run(config, policy, profile, S_p=None, *, check=True) -> Timeline:
    policy = Policy(policy)
    if policy.chunks_ar and S_p is None:
        S_p = ar_bytes(config)
    graph = build_graph(config, policy, S_p if policy.chunks_ar else None, profile)
    timeline = simulate(graph)
    if check:
        check_timeline(timeline)
    return timeline


def t_iter(config, policy, profile, S_p=None) -> float:
    return iteration_time(run(config, policy, profile, S_p))[2]


# -- insertion of one whole-block all-reduce between A2A tasks ---------------


@dataclass(frozen=True)
class Insertion:
    ar_block: int
    order: int
    block: int
    micro: int
    T_b: Optional[float]
    skipped: str = ""


@dataclass
class Theorem1Report:
    T_b_star: float
    insertions: List[Insertion]

    @property
    def evaluated(self) -> List[Insertion]:
        return [i for i in self.insertions if not i.skipped]

    @property
    def all_leq(self) -> bool:
        return all(i.T_b <= self.T_b_star for i in self.evaluated)

    @property
    def any_strict(self) -> bool:
        return any(i.T_b < self.T_b_star for i in self.evaluated)


def _gaps(config: ModelConfig, block: int):
    """Insertion slots among block ``block``'s backward A2A tasks.

    Yields ``(order, micro, task_after)``: the inserted all-reduce runs
    right before ``task_after``.
    """
    R = config.R
    bwd = Phase.BACKWARD
    for r in range(R - 1, 0, -1):
        yield 1, r, (TaskKind.COMBINE, bwd, block, r)
    yield 2, 1, (TaskKind.DISPATCH, bwd, block, R)
    for r in range(R - 1, 0, -1):
        yield 3, r, (TaskKind.DISPATCH, bwd, block, r)
    if block > 1:
        yield 4, 1, (TaskKind.COMBINE, bwd, block - 1, R)


def theorem1_check(config: ModelConfig, profile: HardwareProfile) -> Theorem1Report:
    """Compare centralized all-reduce with inserting one block's all-reduce early.

    The baseline runs every block's all-reduce after the last backward
    compute task. Each variant moves the all-reduce of block ``l+1`` into a
    slot between two consecutive A2A tasks of block ``l`` and forces the comm
    resource to issue it there. A slot is admissible when the gradient of
    block ``l+1`` is complete by the time the preceding A2A task ends in the
    baseline; other slots are reported as skipped.
    """
    if config.L < 2:
        raise ValueError("need at least two blocks to insert an all-reduce")
    base = build_graph(config, Policy.FLOWMOE_AT, profile=profile)
    base_tl = simulate(base)
    check_timeline(base_tl)
    T_b_star = iteration_time(base_tl)[1]
    idx = base.index()
    comm_pos = {tid: i for i, tid in enumerate(base.comm_seq)}
    out: List[Insertion] = []
    for l in range(1, config.L):
        j = l + 1
        ar = idx[(TaskKind.AR_CHUNK, Phase.BACKWARD, j, 1)]
        grad_ready = max(
            base_tl.end[t.id]
            for t in base.tasks
            if t.kind is TaskKind.AT and t.phase is Phase.BACKWARD and t.block == j
        )
        for order, micro, key in _gaps(config, l):
            after = idx[key]
            pos = comm_pos[after.id]
            prev = base.comm_seq[pos - 1]
            if grad_ready > base_tl.end[prev]:
                out.append(Insertion(j, order, l, micro, None, "gradient not ready"))
                continue
            tl = simulate(with_forced_comm(base, ar.id, pos))
            check_timeline(tl)
            out.append(Insertion(j, order, l, micro, iteration_time(tl)[1]))
    return Theorem1Report(T_b_star, out)


# -- chunk size sweeps -------------------------------------------------------


@dataclass
class SweepReport:
    sizes: List[float]
    times: List[float]

    @property
    def non_increasing(self) -> bool:
        return all(b <= a for a, b in zip(self.times, self.times[1:]))

    @property
    def min_at_smallest(self) -> bool:
        return self.times[-1] == min(self.times)

    @property
    def interior_minimum(self) -> bool:
        return self.times[-1] > min(self.times)


def halving_ladder(config: ModelConfig, steps: int = 10) -> List[float]:
    size = ar_bytes(config)
    return [size / 2 ** i for i in range(steps + 1) if size / 2 ** i >= 1]


def sp_sweep(config, profile, sizes: Sequence[float], policy=Policy.FLOWMOE) -> SweepReport:
    sizes = [float(s) for s in sizes]
    return SweepReport(sizes, [t_iter(config, policy, profile, s) for s in sizes])


def theorem2_sweep(config, profile, sizes: Optional[Sequence[float]] = None) -> SweepReport:
    """Iteration time along a strictly decreasing chunk-size ladder.

    Without per-chunk startup cost the times must not increase as chunks
    shrink; the report exposes that as ``non_increasing``.
    """
    if profile.alpha_ar_us != 0:
        raise ValueError("theorem2_sweep needs a profile without AR startup latency")
    sizes = list(sizes) if sizes is not None else halving_ladder(config)
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("chunk sizes must be strictly decreasing")
    return sp_sweep(config, profile, sizes)


# -- gradient accumulation identity ------------------------------------------


def microbatch_equivalence(B: int, R: int, seed: int = 0, dim: int = 3, scaled: bool = True) -> float:
    """Largest relative gap between full-batch and summed micro-batch gradients.

    Least-squares loss ``(w.x - y)**2`` with its analytic gradient. With
    ``scaled`` each micro-batch loss is divided by ``R`` before summing.
    """
    if B % R:
        raise ValueError("B must be divisible by R")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((B, dim))
    y = rng.standard_normal(B)
    w = rng.standard_normal(dim)

    def grad_mean(Xs, ys):
        resid = Xs @ w - ys
        return 2.0 * (resid[:, None] * Xs).sum(axis=0) / len(ys)

    full = grad_mean(X, y)
    b = B // R
    total = np.zeros(dim)
    for r in range(R):
        g = grad_mean(X[r * b:(r + 1) * b], y[r * b:(r + 1) * b])
        total += g / R if scaled else g
    return float(np.max(np.abs(total - full) / np.abs(full)))


# -- performance regimes -----------------------------------------------------


@dataclass
class RegimeReport:
    name: str
    times: Dict[str, float]
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _all_policies(config, profile, S_p=None) -> Dict[str, float]:
    return {p.value: t_iter(config, p, profile, S_p) for p in ABLATION_ORDER}


def compute_tail_bound(config, profile, S_p=None) -> Tuple[float, float]:
    """Total compute time of a FlowMoE iteration and the final block's all-reduce time."""
    tl = run(config, Policy.FLOWMOE, profile, S_p)
    g = tl.graph
    compute = sum(t.duration for t in g.tasks if t.kind in (TaskKind.AT, TaskKind.EXP))
    tail = sum(t.duration for t in g.tasks if t.kind is TaskKind.AR_CHUNK and t.block == 1)
    return compute, tail


def regime_check(
    config: ModelConfig,
    comm_dominated: HardwareProfile,
    compute_dominated: HardwareProfile,
    balanced: HardwareProfile,
    S_p: Optional[float] = None,
    slack: float = 0.01,
) -> List[RegimeReport]:
    reports = []

    times = _all_policies(config, comm_dominated, S_p)
    rep = RegimeReport("comm-dominated", times)
    ratio = times["FLOWMOE"] / times["PIPE_MOE"]
    rep.checks["flowmoe == pipe_moe"] = abs(ratio - 1.0) <= 1e-9
    rep.checks["pipelined < vanilla"] = max(times["FLOWMOE"], times["PIPE_MOE"]) < times["VANILLA_EP"]
    reports.append(rep)

    times = _all_policies(config, compute_dominated, S_p)
    compute, tail = compute_tail_bound(config, compute_dominated, S_p)
    rep = RegimeReport("compute-dominated", dict(times, compute_plus_tail=compute + tail))
    rep.checks["flowmoe < pipe_moe"] = times["FLOWMOE"] < times["PIPE_MOE"]
    rep.checks["flowmoe near compute + tail"] = times["FLOWMOE"] <= (compute + tail) * (1 + slack)
    reports.append(rep)

    times = _all_policies(config, balanced, S_p)
    rep = RegimeReport("balanced", times)
    rep.checks.update(dominance_checks(times))
    reports.append(rep)
    return reports


def dominance_checks(times: Dict[str, float]) -> Dict[str, bool]:
    t = times
    return {
        "flowmoe < flowmoe_at": t["FLOWMOE"] < t["FLOWMOE_AT"],
        "flowmoe_at < pipe_moe": t["FLOWMOE_AT"] < t["PIPE_MOE"],
        "pipe_moe < vanilla": t["PIPE_MOE"] < t["VANILLA_EP"],
        "flowmoe <= flowmoe_ar": t["FLOWMOE"] <= t["FLOWMOE_AR"],
    }


# -- gradient memory ---------------------------------------------------------


def comm_saturated(config: ModelConfig, profile: HardwareProfile, S_p: float) -> bool:
    """True when the comm resource cannot finish any AR chunk early.

    Looks at the centralized baseline between the first and the last block
    gradient becoming complete: if the comm lane never idles there for as
    long as one chunk takes, chunked all-reduce cannot release memory before
    every gradient exists.
    """
    base = run(config, Policy.FLOWMOE_AT, profile)
    g = base.graph
    produced: Dict[int, float] = {}
    for t in g.tasks:
        if t.kind is TaskKind.AT and t.phase is Phase.BACKWARD:
            produced[t.block] = max(produced.get(t.block, 0.0), base.end[t.id])
    lo, hi = min(produced.values()), max(produced.values())
    chunked = build_graph(config, Policy.FLOWMOE, S_p, profile)
    need = max(t.duration for t in chunked.tasks if t.kind is TaskKind.AR_CHUNK)
    busy = sorted(
        (base.start[t.id], base.end[t.id])
        for t in g.tasks
        if t.kind in (TaskKind.DISPATCH, TaskKind.COMBINE) and base.end[t.id] > lo
    )
    cursor = lo
    for s, e in busy:
        if min(s, hi) - cursor >= need:
            return False
        cursor = max(cursor, e)
        if cursor >= hi:
            break
    return hi - cursor < need


# -- stragglers --------------------------------------------------------------


@dataclass
class StragglerRow:
    slow_factor: float
    hetero: Dict[str, float]
    homo: Dict[str, float]

    @property
    def matches_slowest(self) -> bool:
        return self.hetero == self.homo

    @property
    def flowmoe_fastest(self) -> bool:
        return self.hetero["FLOWMOE"] == min(self.hetero.values())


def straggler_check(
    config: ModelConfig,
    profile: HardwareProfile,
    factors: Sequence[float] = (1.0, 1.5, 2.0, 4.0),
    S_p: Optional[float] = None,
) -> List[StragglerRow]:
    """One slow worker versus every worker at the slow speed."""
    rows = []
    for s in factors:
        hetero = profile.replace(compute_scale=(1.0,) * (config.P - 1) + (float(s),))
        homo = profile.replace(compute_scale=(float(s),) * config.P)
        rows.append(StragglerRow(s, _all_policies(config, hetero, S_p), _all_policies(config, homo, S_p)))
    return rows


# -- randomized inputs -------------------------------------------------------


def random_config(rng: random.Random, *, L=(2, 4), R=(1, 4), P=(2, 4, 8, 16)) -> ModelConfig:
    P_ = rng.choice(P)
    R_ = rng.randint(*R)
    N = rng.choice([64, 96, 128, 192, 256])
    B = rng.choice([2, 4, 8])
    while (B * N) % R_:
        N += 32
    return ModelConfig(
        P=P_,
        L=rng.randint(*L),
        B=B,
        N=N,
        M=rng.choice([128, 256, 512, 1024]),
        H=rng.choice([256, 512, 1024, 2048]),
        E=P_ * rng.choice([1, 2]),
        k=rng.choice([1, 2]),
        f=rng.choice([1.0, 1.1, 1.2]),
        R=R_,
    )


def random_profile(rng: random.Random, alpha_ar_us: Optional[float] = None) -> HardwareProfile:
    return HardwareProfile(
        flops_per_us=10 ** rng.uniform(6.0, 7.5),
        bw_bytes_per_us=10 ** rng.uniform(3.0, 4.5),
        alpha_a2a_us=rng.uniform(0.0, 50.0),
        alpha_ar_us=rng.uniform(0.0, 100.0) if alpha_ar_us is None else alpha_ar_us,
    )
