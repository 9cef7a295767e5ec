"""Event-driven execution of a task graph on one compute and one comm resource.

The inner loop comes from the compiled ``_kernel`` extension when it is
built, else from ``_pykernel``. Set ``FLOWSIM_BACKEND=python`` to force the
fallback.
"""

from __future__ import annotations

import logging
import os
from typing import Optional

import numpy as np

from . import _pykernel
from .cost import HardwareProfile
from .model import TaskGraph, Timeline
from .schedule import Policy, resolve_durations

log = logging.getLogger(__name__)

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _pykernel}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled


def default_backend() -> str:
    wanted = os.environ.get("FLOWSIM_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise RuntimeError(f"backend {wanted!r} unavailable; have {sorted(BACKENDS)}")
        return wanted
    return "compiled" if "compiled" in BACKENDS else "python"


class DeadlockError(RuntimeError):
    pass


def _arrays(graph: TaskGraph):
    n = len(graph.tasks)
    dur = np.fromiter((t.duration for t in graph.tasks), dtype=np.float64, count=n)
    edges = np.array(graph.deps, dtype=np.intc).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    order = np.lexsort((v, u))
    pred_count = np.bincount(v, minlength=n).astype(np.intc)
    succ_ptr = np.zeros(n + 1, dtype=np.longlong)
    succ_ptr[1:] = np.cumsum(np.bincount(u, minlength=n))
    succ_idx = np.ascontiguousarray(v[order], dtype=np.intc)
    in_pool = np.zeros(n, dtype=np.uint8)
    in_pool[list(graph.pool)] = 1
    return (
        dur,
        pred_count,
        succ_ptr,
        succ_idx,
        np.array(graph.compute_seq, dtype=np.intc),
        np.array(graph.comm_seq, dtype=np.intc),
        in_pool,
    )


def simulate(
    graph: TaskGraph,
    profile: Optional[HardwareProfile] = None,
    policy: Optional[Policy] = None,
    *,
    backend: Optional[str] = None,
) -> Timeline:
    """Run one iteration and return its timeline.

    With ``profile`` the durations are (re)computed first; otherwise the
    graph must already carry them. Raises :class:`DeadlockError` when tasks
    remain but none can start.
    """
    if policy is not None and Policy(policy).value != graph.policy:
        raise ValueError(f"graph was built for {graph.policy}, not {Policy(policy).value}")
    if profile is not None:
        graph = resolve_durations(graph, profile)
    covered = set(graph.compute_seq) | set(graph.comm_seq) | set(graph.pool)
    if len(covered) != len(graph.tasks):
        raise ValueError("every task must be in compute_seq, comm_seq or pool")
    kernel = BACKENDS[backend or default_backend()]
    start, end, done = kernel.run(*_arrays(graph))
    if done < len(graph.tasks):
        raise DeadlockError(_deadlock_report(graph, start))
    return Timeline(graph, tuple(np.asarray(start, float).tolist()), tuple(np.asarray(end, float).tolist()))


def _deadlock_report(graph: TaskGraph, start) -> str:
    preds = graph.preds()
    blocked = [t for t in graph.tasks if np.isnan(start[t.id])]
    lines = [f"deadlock: {len(blocked)} of {len(graph.tasks)} tasks never started"]
    for t in blocked[:5]:
        waiting = [graph.tasks[p].label for p in preds[t.id] if np.isnan(start[p])]
        lines.append(f"  {t.label} ({t.phase.value}) waits on {waiting or 'resource order'}")
    return "\n".join(lines)
