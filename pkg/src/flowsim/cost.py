"""Analytic task costs: flop counts, payload sizes and the alpha-beta model.

Durations are in microseconds, sizes in bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Mapping, NamedTuple, Optional, Tuple

from .model import ModelConfig, Phase, Resource, TaskKind, capacity, check

BACKWARD_FACTOR = 2.0

# Flops per multiply-accumulate is 2; the constants fold that in.
AT_PROJ_COEF = 8  # four MxM projections (Q, K, V, output)
AT_ATTN_COEF = 4  # QK^T and attention.V
AT_GATE_COEF = 2  # MxE gating matmul
EXPERT_COEF = 4  # two GEMMs (MxH, HxM)


class CostError(ValueError):
    pass


OverrideKey = Tuple[TaskKind, Phase]


@dataclass(frozen=True)
class HardwareProfile:
    """Per-worker rates of the analytic cost model.

    ``overrides`` maps ``(kind, phase)`` to a full-batch duration in us that
    replaces the analytic value. Compute and A2A overrides are split evenly
    over the ``R`` subtasks. An ``AR_CHUNK`` override is the bandwidth term
    of one whole block all-reduce; chunks get a share proportional to their
    size plus ``alpha_ar_us``.
    """

    flops_per_us: float
    bw_bytes_per_us: float
    alpha_a2a_us: float = 0.0
    alpha_ar_us: float = 0.0
    compute_scale: Tuple[float, ...] = ()
    overrides: Mapping[OverrideKey, float] = field(default_factory=dict)
    backward_factor: float = BACKWARD_FACTOR

    def __post_init__(self):
        problems = []
        if not self.flops_per_us > 0:
            problems.append("flops_per_us must be > 0")
        if not self.bw_bytes_per_us > 0:
            problems.append("bw_bytes_per_us must be > 0")
        if self.alpha_a2a_us < 0 or self.alpha_ar_us < 0:
            problems.append("startup latencies must be >= 0")
        if any(not s >= 1.0 for s in self.compute_scale):
            problems.append("compute_scale entries must be >= 1")
        if not self.backward_factor > 0:
            problems.append("backward_factor must be > 0")
        for key, value in self.overrides.items():
            if not (isinstance(key, tuple) and len(key) == 2):
                problems.append(f"override key {key!r} must be (TaskKind, Phase)")
            elif value < 0:
                problems.append(f"override {key!r} must be >= 0")
        if problems:
            raise CostError("; ".join(problems))
        object.__setattr__(self, "compute_scale", tuple(float(s) for s in self.compute_scale))
        object.__setattr__(
            self,
            "overrides",
            {(TaskKind(k), Phase(p)): float(v) for (k, p), v in self.overrides.items()},
        )

    @property
    def straggler_factor(self) -> float:
        # Collectives wait for the slowest worker.
        return max(self.compute_scale, default=1.0)

    def replace(self, **changes) -> "HardwareProfile":
        values = dict(
            flops_per_us=self.flops_per_us,
            bw_bytes_per_us=self.bw_bytes_per_us,
            alpha_a2a_us=self.alpha_a2a_us,
            alpha_ar_us=self.alpha_ar_us,
            compute_scale=self.compute_scale,
            overrides=dict(self.overrides),
            backward_factor=self.backward_factor,
        )
        values.update(changes)
        return HardwareProfile(**values)


def at_flops(config: ModelConfig) -> int:
    """Flops of one full-batch MHA+gating task of a block."""
    B, N, M, E = config.B, config.N, config.M, config.E
    return (
        AT_PROJ_COEF * B * N * M * M
        + AT_ATTN_COEF * B * B * N * N * M
        + AT_GATE_COEF * B * N * M * E
    )


def expert_flops(config: ModelConfig) -> int:
    """Flops of one full-batch expert task on one worker."""
    return EXPERT_COEF * config.experts_per_worker * capacity(config) * config.M * config.H


def outgoing_fraction(P: int) -> float:
    """Share of an A2A tensor that leaves the worker; the rest stays local."""
    return (P - 1) / P


def ring_factor(P: int) -> float:
    return 2.0 * (P - 1) / P


class A2ABytes(NamedTuple):
    total: int
    outgoing: float
    per_subtask: float


def a2a_bytes(config: ModelConfig) -> A2ABytes:
    """Dispatch (equivalently combine) tensor sizes of one worker."""
    total = config.E * capacity(config) * config.M * config.bytes_per_param
    outgoing = total * outgoing_fraction(config.P)
    return A2ABytes(total, outgoing, outgoing / config.R)


def ar_params(config: ModelConfig) -> int:
    """Replicated MHA + gating parameters of one block."""
    return 4 * config.M * config.M + config.M * config.E


def ar_bytes(config: ModelConfig) -> int:
    return ar_params(config) * config.bytes_per_param


def partition_ar(nbytes: int, chunk: float) -> List[int]:
    """Split a tensor into ``chunk``-sized pieces plus a remainder, in order.

    ``chunk`` may be fractional (the tuner searches a continuous range).
    Piece boundaries are the integer offsets ``floor(i*chunk)``, computed
    exactly, so there are always ``ceil(nbytes/chunk)`` pieces and integral
    chunk sizes give ``[chunk, ..., chunk, remainder]``.
    """
    if not nbytes > 0 or not chunk > 0:
        raise CostError(f"partition needs positive sizes, got ({nbytes}, {chunk})")
    if chunk < 1:
        raise CostError(f"chunk size must be at least one byte, got {chunk}")
    if chunk >= nbytes:
        return [int(nbytes)]
    num, den = Fraction(chunk).as_integer_ratio()
    nbytes = int(nbytes)
    count = -(-nbytes * den // num)
    bounds = [i * num // den for i in range(count)] + [nbytes]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def _compute_time(flops: float, phase: Phase, profile: HardwareProfile) -> float:
    t = flops / profile.flops_per_us * profile.straggler_factor
    if phase is Phase.BACKWARD:
        t *= profile.backward_factor
    return t


def ar_beta_per_byte(config: ModelConfig, profile: HardwareProfile) -> float:
    """Bandwidth time per byte of all-reduce tensor (ring volume)."""
    override = profile.overrides.get((TaskKind.AR_CHUNK, Phase.BACKWARD))
    if override is not None:
        return override / ar_bytes(config)
    return ring_factor(config.P) / profile.bw_bytes_per_us


def task_duration(
    kind: TaskKind,
    phase: Phase,
    config: ModelConfig,
    profile: HardwareProfile,
    *,
    split: Optional[int] = None,
    chunk_bytes: Optional[int] = None,
) -> float:
    """Duration in us of one task.

    ``split`` is the number of equal subtasks the full-batch task is cut
    into (defaults to ``config.R``); ``chunk_bytes`` sizes an AR chunk.
    """
    check(config)
    parts = config.R if split is None else split
    override = profile.overrides.get((kind, phase))
    if kind is TaskKind.AR_CHUNK:
        if chunk_bytes is None or chunk_bytes <= 0:
            raise CostError("AR chunk needs a positive size")
        if phase is not Phase.BACKWARD:
            raise CostError("all-reduce only happens in the backward pass")
        t = profile.alpha_ar_us + chunk_bytes * ar_beta_per_byte(config, profile)
        if override is not None:
            return t
    elif override is not None:
        t = override / parts
        if kind.resource is Resource.COMPUTE:
            t *= profile.straggler_factor
        return t
    elif kind is TaskKind.AT:
        t = _compute_time(at_flops(config) / parts, phase, profile)
    elif kind is TaskKind.EXP:
        t = _compute_time(expert_flops(config) / parts, phase, profile)
    else:
        outgoing = a2a_bytes(config).outgoing / parts
        t = profile.alpha_a2a_us + outgoing / profile.bw_bytes_per_us
    if not t > 0:
        raise CostError(f"non-positive duration {t} for {kind.value}/{phase.value}")
    return t
