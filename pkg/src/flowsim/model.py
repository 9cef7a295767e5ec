"""Domain types: model shape, tasks, task graphs and simulated timelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple


class ConfigError(ValueError):
    """Raised when a model configuration violates an invariant.

    ``problems`` holds one ``(field, message)`` pair per violation.
    """

    def __init__(self, problems: Sequence[Tuple[str, str]]):
        self.problems = list(problems)
        super().__init__("; ".join(f"{name}: {msg}" for name, msg in self.problems))


class TaskKind(str, Enum):
    AT = "AT"
    EXP = "EXP"
    DISPATCH = "DISPATCH"
    COMBINE = "COMBINE"
    AR_CHUNK = "AR_CHUNK"

    @property
    def resource(self) -> "Resource":
        if self in (TaskKind.AT, TaskKind.EXP):
            return Resource.COMPUTE
        return Resource.COMM

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    TaskKind.AT: "AT",
    TaskKind.EXP: "E",
    TaskKind.DISPATCH: "D",
    TaskKind.COMBINE: "C",
    TaskKind.AR_CHUNK: "AR",
}


class Phase(str, Enum):
    FORWARD = "FORWARD"
    BACKWARD = "BACKWARD"


class Resource(int, Enum):
    COMPUTE = 0
    COMM = 1


@dataclass(frozen=True)
class ModelConfig:
    """Shape of one MoE training job.

    Attributes mirror the usual MoE notation: ``P`` workers, ``L`` blocks,
    ``B`` samples per worker, ``N`` tokens per sample, embedding size ``M``,
    expert hidden size ``H``, ``E`` experts in total, top-``k`` routing,
    capacity factor ``f`` and pipelining degree ``R``.
    """

    P: int
    L: int
    B: int
    N: int
    M: int
    H: int
    E: int
    k: int
    f: float
    R: int = 2
    bytes_per_param: int = 4

    def replace(self, **changes) -> "ModelConfig":
        values = {fl.name: getattr(self, fl.name) for fl in fields(self)}
        values.update(changes)
        return ModelConfig(**values)

    @property
    def experts_per_worker(self) -> int:
        if self.E % self.P:
            raise ConfigError([("E", f"E={self.E} is not divisible by P={self.P}")])
        return self.E // self.P


_POSITIVE_INTS = ("P", "L", "B", "N", "M", "H", "E", "k", "R", "bytes_per_param")


def validate(config: ModelConfig) -> List[Tuple[str, str]]:
    """Return every violated invariant as ``(field, message)``; empty means valid."""
    problems: List[Tuple[str, str]] = []
    for name in _POSITIVE_INTS:
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append((name, f"must be an integer, got {value!r}"))
        elif value < 1:
            problems.append((name, f"must be positive, got {value}"))
    if isinstance(config.P, int) and config.P < 2:
        problems.append(("P", f"need at least 2 workers, got {config.P}"))
    if not isinstance(config.f, (int, float)) or isinstance(config.f, bool) or not config.f > 0:
        problems.append(("f", f"capacity factor must be > 0, got {config.f!r}"))
    if problems:
        return problems
    if config.k > config.E:
        problems.append(("k", f"k={config.k} exceeds E={config.E}"))
    if (config.B * config.N) % config.R:
        problems.append(
            ("R", f"B*N={config.B * config.N} is not divisible by R={config.R}")
        )
    return problems


def check(config: ModelConfig) -> ModelConfig:
    problems = validate(config)
    if problems:
        raise ConfigError(problems)
    return config


def capacity(config: ModelConfig) -> int:
    """Tokens each expert accepts: ``ceil(f*k*B*N/E)``.

    The factor is read through its decimal repr so that e.g. ``f=1.1`` is
    treated as 11/10 and exact products are not pushed over an integer.
    """
    check(config)
    f = Fraction(repr(float(config.f)))
    return math.ceil(f * config.k * config.B * config.N / config.E)


@dataclass(frozen=True)
class Task:
    id: int
    kind: TaskKind
    block: int
    micro: int
    phase: Phase
    duration: float
    payload_bytes: int = 0
    # AR chunks only: byte range [offset, offset + payload_bytes) of the block tensor.
    offset: int = 0

    @property
    def resource(self) -> Resource:
        return self.kind.resource

    @property
    def label(self) -> str:
        tag = "c" if self.kind is TaskKind.AR_CHUNK else "r"
        return f"{self.kind.short}[l={self.block},{tag}={self.micro}]"


@dataclass(frozen=True)
class TaskGraph:
    """Tasks of one iteration plus dependency edges and per-resource sequences.

    ``compute_seq`` and ``comm_seq`` are the fixed issue orders of the two
    resources; ``pool`` lists the AR tasks that instead wait in the
    low-priority FIFO of the communication pool.
    """

    tasks: Tuple[Task, ...]
    deps: Tuple[Tuple[int, int], ...]
    compute_seq: Tuple[int, ...]
    comm_seq: Tuple[int, ...]
    pool: Tuple[int, ...]
    config: ModelConfig
    policy: str
    chunk_bytes: Optional[int] = None

    def __len__(self) -> int:
        return len(self.tasks)

    def by_phase(self, phase: Phase) -> List[Task]:
        return [t for t in self.tasks if t.phase is phase]

    def preds(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in self.tasks]
        for u, v in self.deps:
            out[v].append(u)
        return out

    def succs(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in self.tasks]
        for u, v in self.deps:
            out[u].append(v)
        return out

    def topological_order(self) -> List[int]:
        """Kahn's algorithm; raises ``ValueError`` on a cycle."""
        indeg = [0] * len(self.tasks)
        for _, v in self.deps:
            indeg[v] += 1
        succs = self.succs()
        stack = [i for i, d in enumerate(indeg) if d == 0]
        order: List[int] = []
        while stack:
            u = stack.pop()
            order.append(u)
            for v in succs[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    stack.append(v)
        if len(order) != len(self.tasks):
            raise ValueError("task graph contains a cycle")
        return order

    def find(self, kind: TaskKind, phase: Phase, block: int, micro: int) -> Task:
        for t in self.tasks:
            if t.kind is kind and t.phase is phase and t.block == block and t.micro == micro:
                return t
        raise KeyError((kind, phase, block, micro))

    def index(self) -> Dict[Tuple[TaskKind, Phase, int, int], Task]:
        return {(t.kind, t.phase, t.block, t.micro): t for t in self.tasks}


@dataclass(frozen=True)
class Entry:
    task: int
    worker: int
    resource: Resource
    start: float
    end: float


@dataclass(frozen=True)
class Timeline:
    """Simulated schedule of one worker (the job is SPMD-symmetric)."""

    graph: TaskGraph
    start: Tuple[float, ...]
    end: Tuple[float, ...]
    worker: int = 0

    def entries(self) -> Iterator[Entry]:
        for t in self.graph.tasks:
            yield Entry(t.id, self.worker, t.resource, self.start[t.id], self.end[t.id])

    @property
    def makespan(self) -> float:
        return max(self.end, default=0.0)

    @property
    def T_f(self) -> float:
        return _phase_times(self)[0]

    @property
    def T_b(self) -> float:
        return _phase_times(self)[1]

    @property
    def T_iter(self) -> float:
        fwd, bwd = _phase_times(self)
        return fwd + bwd


def _phase_times(timeline: Timeline) -> Tuple[float, float]:
    from .metrics import iteration_time

    t_f, t_b, _ = iteration_time(timeline)
    return t_f, t_b
