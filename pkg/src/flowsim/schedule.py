"""Per-iteration task graphs for each scheduling policy."""

from __future__ import annotations

from enum import Enum
from typing import Dict, List, Optional, Tuple

from .cost import (
    HardwareProfile,
    ar_beta_per_byte,
    a2a_bytes,
    ar_bytes,
    partition_ar,
    task_duration,
)
from .model import ModelConfig, Phase, Task, TaskGraph, TaskKind, check

# Simulated durations live on a dyadic grid so that every sum the event
# loop forms is exact in binary floating point (below ~2**33 us).
QUANTUM = 2.0 ** -20


def quantize(us: float) -> float:
    return round(us / QUANTUM) * QUANTUM


class Policy(str, Enum):
    VANILLA_EP = "VANILLA_EP"
    PIPE_MOE = "PIPE_MOE"
    FLOWMOE_AT = "FLOWMOE_AT"
    FLOWMOE_AR = "FLOWMOE_AR"
    FLOWMOE = "FLOWMOE"

    @property
    def splits_at(self) -> bool:
        return self in (Policy.FLOWMOE_AT, Policy.FLOWMOE)

    @property
    def chunks_ar(self) -> bool:
        return self in (Policy.FLOWMOE_AR, Policy.FLOWMOE)

    def degree(self, config: ModelConfig) -> int:
        return 1 if self is Policy.VANILLA_EP else config.R


ABLATION_ORDER = (
    Policy.VANILLA_EP,
    Policy.PIPE_MOE,
    Policy.FLOWMOE_AT,
    Policy.FLOWMOE_AR,
    Policy.FLOWMOE,
)


class GraphError(ValueError):
    pass


class _Builder:
    def __init__(self, config: ModelConfig, policy: Policy):
        self.config = config
        self.policy = policy
        self.tasks: List[Task] = []
        self.deps: List[Tuple[int, int]] = []
        self.compute_seq: List[int] = []
        self.comm_seq: List[int] = []
        self.pool: List[int] = []

    def add(self, kind, block, micro, phase, payload=0, offset=0) -> int:
        tid = len(self.tasks)
        self.tasks.append(Task(tid, kind, block, micro, phase, 0.0, payload, offset))
        if kind is TaskKind.AR_CHUNK:
            self.pool.append(tid)
        elif kind.resource.value == 0:
            self.compute_seq.append(tid)
        else:
            self.comm_seq.append(tid)
        return tid

    def edge(self, u: int, v: int):
        self.deps.append((u, v))


def build_graph(
    config: ModelConfig,
    policy: Policy,
    S_p: Optional[float] = None,
    profile: Optional[HardwareProfile] = None,
) -> TaskGraph:
    """Forward and backward task graph of one iteration.

    Durations are filled in when ``profile`` is given; otherwise every task
    carries 0.0 until :func:`resolve_durations` is applied.
    """
    check(config)
    policy = Policy(policy)
    if policy.chunks_ar and S_p is None:
        raise GraphError(f"{policy.value} needs an AR chunk size S_p")
    if not policy.chunks_ar and S_p is not None:
        raise GraphError(f"{policy.value} does not chunk all-reduce; S_p must be None")
    if S_p is not None and not S_p > 0:
        raise GraphError(f"S_p must be positive, got {S_p}")

    b = _Builder(config, policy)
    R = policy.degree(config)
    n_at = R if policy.splits_at else 1
    L = config.L
    blocks_at: Dict[Tuple[Phase, int], List[int]] = {}
    idx: Dict[Tuple[TaskKind, Phase, int, int], int] = {}

    def at_of(phase: Phase, block: int, r: int) -> int:
        ids = blocks_at[(phase, block)]
        return ids[r - 1] if len(ids) > 1 else ids[0]

    # Forward: compute AT_1..AT_R, E_1..E_R per block; comm D_1..D_R, C_1..C_R.
    fwd = Phase.FORWARD
    for l in range(1, L + 1):
        blocks_at[(fwd, l)] = [b.add(TaskKind.AT, l, r, fwd) for r in range(1, n_at + 1)]
        for r in range(1, R + 1):
            idx[(TaskKind.DISPATCH, fwd, l, r)] = b.add(TaskKind.DISPATCH, l, r, fwd)
        for r in range(1, R + 1):
            idx[(TaskKind.EXP, fwd, l, r)] = b.add(TaskKind.EXP, l, r, fwd)
        for r in range(1, R + 1):
            idx[(TaskKind.COMBINE, fwd, l, r)] = b.add(TaskKind.COMBINE, l, r, fwd)
    for l in range(1, L + 1):
        for r in range(1, R + 1):
            d = idx[(TaskKind.DISPATCH, fwd, l, r)]
            e = idx[(TaskKind.EXP, fwd, l, r)]
            c = idx[(TaskKind.COMBINE, fwd, l, r)]
            b.edge(at_of(fwd, l, r), d)
            b.edge(d, e)
            b.edge(e, c)
            if l < L:
                b.edge(c, at_of(fwd, l + 1, r))

    # Backward: compute E_R..E_1, AT_R..AT_1 per block (L down to 1);
    # comm C_R..C_1, D_R..D_1.
    bwd = Phase.BACKWARD
    for l in range(L, 0, -1):
        for r in range(R, 0, -1):
            idx[(TaskKind.COMBINE, bwd, l, r)] = b.add(TaskKind.COMBINE, l, r, bwd)
        for r in range(R, 0, -1):
            idx[(TaskKind.EXP, bwd, l, r)] = b.add(TaskKind.EXP, l, r, bwd)
        for r in range(R, 0, -1):
            idx[(TaskKind.DISPATCH, bwd, l, r)] = b.add(TaskKind.DISPATCH, l, r, bwd)
        blocks_at[(bwd, l)] = [None] * n_at
        for r in range(n_at, 0, -1):
            blocks_at[(bwd, l)][r - 1] = b.add(TaskKind.AT, l, r, bwd)
    for l in range(L, 0, -1):
        for r in range(R, 0, -1):
            c = idx[(TaskKind.COMBINE, bwd, l, r)]
            e = idx[(TaskKind.EXP, bwd, l, r)]
            d = idx[(TaskKind.DISPATCH, bwd, l, r)]
            b.edge(c, e)
            b.edge(e, d)
            b.edge(d, at_of(bwd, l, r))
            if l > 1:
                b.edge(at_of(bwd, l, r), idx[(TaskKind.COMBINE, bwd, l - 1, r)])

    # The backward pass starts once the forward pass has fully drained.
    b.edge(idx[(TaskKind.COMBINE, fwd, L, R)], idx[(TaskKind.COMBINE, bwd, L, R)])

    # All-reduce: one tensor per block, enqueued L..1.
    size = ar_bytes(config)
    last_compute = b.compute_seq[-1]
    for l in range(L, 0, -1):
        if policy.chunks_ar:
            pieces = partition_ar(size, S_p)
        else:
            pieces = [size]
        offset = 0
        for c, piece in enumerate(pieces, start=1):
            tid = b.add(TaskKind.AR_CHUNK, l, c, bwd, piece, offset)
            offset += piece
            for at in blocks_at[(bwd, l)]:
                b.edge(at, tid)
            if not policy.chunks_ar:
                # centralized: nothing is reduced before backward compute ends
                b.edge(last_compute, tid)

    # Resource-order chains.
    for seq in (b.compute_seq, b.comm_seq):
        for u, v in zip(seq, seq[1:]):
            b.edge(u, v)

    graph = TaskGraph(
        tasks=tuple(b.tasks),
        deps=tuple(dict.fromkeys(b.deps)),
        compute_seq=tuple(b.compute_seq),
        comm_seq=tuple(b.comm_seq),
        pool=tuple(b.pool),
        config=config,
        policy=policy.value,
        chunk_bytes=None if S_p is None else S_p,
    )
    if profile is not None:
        graph = resolve_durations(graph, profile)
    return graph


def resolve_durations(graph: TaskGraph, profile: HardwareProfile) -> TaskGraph:
    """Return ``graph`` with every task duration computed from ``profile``."""
    config = graph.config
    policy = Policy(graph.policy)
    R = policy.degree(config)
    n_at = R if policy.splits_at else 1
    cache: Dict[Tuple[TaskKind, Phase], float] = {}
    beta = ar_beta_per_byte(config, profile)
    alpha_ar = quantize(profile.alpha_ar_us)
    tasks = []
    for t in graph.tasks:
        if t.kind is TaskKind.AR_CHUNK:
            # Quantize cumulative byte offsets so any partition of a tensor
            # sums to exactly the same bandwidth time.
            lo, hi = t.offset, t.offset + t.payload_bytes
            dur = alpha_ar + (quantize(hi * beta) - quantize(lo * beta))
        else:
            key = (t.kind, t.phase)
            if key not in cache:
                split = n_at if t.kind is TaskKind.AT else R
                cache[key] = quantize(
                    task_duration(t.kind, t.phase, config, profile, split=split)
                )
            dur = cache[key]
        tasks.append(
            Task(t.id, t.kind, t.block, t.micro, t.phase, dur, _payload(t, config, R), t.offset)
        )
    return TaskGraph(
        tasks=tuple(tasks),
        deps=graph.deps,
        compute_seq=graph.compute_seq,
        comm_seq=graph.comm_seq,
        pool=graph.pool,
        config=config,
        policy=graph.policy,
        chunk_bytes=graph.chunk_bytes,
    )


def _payload(task: Task, config: ModelConfig, R: int) -> int:
    if task.kind is TaskKind.AR_CHUNK:
        return task.payload_bytes
    if task.kind in (TaskKind.DISPATCH, TaskKind.COMBINE):
        return round(a2a_bytes(config).outgoing / R)
    return 0


def with_forced_comm(graph: TaskGraph, task: int, position: int) -> TaskGraph:
    """Move pool task ``task`` into the comm sequence before index ``position``.

    The comm resource then issues it strictly in that slot, waiting for it
    if it is not ready; used to replay a fixed insertion order.
    """
    if task not in graph.pool:
        raise GraphError(f"task {task} is not a pool task")
    last_compute = graph.compute_seq[-1]
    deps = tuple(
        (u, v) for u, v in graph.deps if not (v == task and u == last_compute)
    )
    # keep the gradient-ready edges (every backward AT of the block)
    blk = graph.tasks[task].block
    needed = {
        t.id
        for t in graph.tasks
        if t.kind is TaskKind.AT and t.phase is Phase.BACKWARD and t.block == blk
    }
    deps = deps + tuple((u, task) for u in sorted(needed) if (u, task) not in deps)
    comm = list(graph.comm_seq)
    comm.insert(position, task)
    return TaskGraph(
        tasks=graph.tasks,
        deps=deps,
        compute_seq=graph.compute_seq,
        comm_seq=tuple(comm),
        pool=tuple(p for p in graph.pool if p != task),
        config=graph.config,
        policy=graph.policy,
        chunk_bytes=graph.chunk_bytes,
    )
