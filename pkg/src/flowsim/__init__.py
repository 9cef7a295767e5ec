"""Discrete-event simulation and scheduling of distributed MoE training iterations."""

from .cost import HardwareProfile, a2a_bytes, ar_bytes, at_flops, expert_flops, partition_ar, task_duration
from .engine import DeadlockError, default_backend, simulate
from .metrics import check_timeline, iteration_time, pending_gradient_peak
from .model import ConfigError, ModelConfig, Phase, Resource, Task, TaskGraph, TaskKind, Timeline, capacity, validate
from .schedule import Policy, build_graph

__all__ = [
    "ConfigError",
    "DeadlockError",
    "HardwareProfile",
    "ModelConfig",
    "Phase",
    "Policy",
    "Resource",
    "Task",
    "TaskGraph",
    "TaskKind",
    "Timeline",
    "a2a_bytes",
    "ar_bytes",
    "at_flops",
    "build_graph",
    "capacity",
    "check_timeline",
    "default_backend",
    "expert_flops",
    "iteration_time",
    "partition_ar",
    "pending_gradient_peak",
    "simulate",
    "task_duration",
    "validate",
]
