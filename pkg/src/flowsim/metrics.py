"""Quantities and validity scans computed from a finished timeline."""

from __future__ import annotations

import bisect
from collections import defaultdict
from typing import Dict, List, Tuple

from .cost import ar_bytes
from .model import Phase, Resource, TaskKind, Timeline


class TimelineError(AssertionError):
    pass


def iteration_time(timeline: Timeline) -> Tuple[float, float, float]:
    """``(T_f, T_b, T_iter)``.

    ``T_b`` runs from the start of the first backward combine to the end of
    the last backward task (the final all-reduce chunk whenever there is
    all-reduce work).
    """
    g = timeline.graph
    fwd = [t.id for t in g.tasks if t.phase is Phase.FORWARD]
    bwd = [t.id for t in g.tasks if t.phase is Phase.BACKWARD]
    if not fwd or not bwd:
        raise ValueError("timeline lacks a forward or backward phase")
    t0 = min(timeline.start[i] for i in fwd)
    t_f = max(timeline.end[i] for i in fwd) - t0
    first = g.find(TaskKind.COMBINE, Phase.BACKWARD, g.config.L, _degree(g))
    t_b = max(timeline.end[i] for i in bwd) - timeline.start[first.id]
    return t_f, t_b, t_f + t_b


def _degree(graph) -> int:
    return max((t.micro for t in graph.tasks if t.kind is TaskKind.COMBINE), default=1)


def pending_gradient_peak(timeline: Timeline, config=None) -> int:
    """Largest amount of reduced-later gradient held at any instant, in bytes.

    A block's gradient counts once its last backward AT task finishes and is
    released chunk by chunk as all-reduce work completes. Production at an
    instant is applied before release.
    """
    g = timeline.graph
    size = ar_bytes(config or g.config)
    produced: Dict[int, float] = {}
    for t in g.tasks:
        if t.kind is TaskKind.AT and t.phase is Phase.BACKWARD:
            produced[t.block] = max(produced.get(t.block, float("-inf")), timeline.end[t.id])
    events: List[Tuple[float, int, int]] = [(when, 0, size) for when in produced.values()]
    for t in g.tasks:
        if t.kind is TaskKind.AR_CHUNK:
            events.append((timeline.end[t.id], 1, -t.payload_bytes))
    events.sort()
    level = peak = 0
    for _, _, delta in events:
        level += delta
        peak = max(peak, level)
    return peak


def resource_violations(timeline: Timeline) -> List[str]:
    lanes: Dict[Tuple[int, Resource], List[Tuple[float, float, int]]] = defaultdict(list)
    for e in timeline.entries():
        lanes[(e.worker, e.resource)].append((e.start, e.end, e.task))
    out = []
    for key, spans in lanes.items():
        spans.sort()
        for (s0, e0, a), (s1, e1, b) in zip(spans, spans[1:]):
            if s1 < e0:
                out.append(f"overlap on {key}: task {a} [{s0}, {e0}) and {b} [{s1}, {e1})")
    return out


def duration_violations(timeline: Timeline) -> List[str]:
    out = []
    for t in timeline.graph.tasks:
        if timeline.end[t.id] - timeline.start[t.id] != t.duration:
            out.append(f"{t.label} ran {timeline.end[t.id] - timeline.start[t.id]} != {t.duration}")
    return out


def dependency_violations(timeline: Timeline) -> List[str]:
    out = []
    g = timeline.graph
    for u, v in g.deps:
        if timeline.start[v] < timeline.end[u]:
            out.append(f"{g.tasks[v].label} starts before {g.tasks[u].label} ends")
    return out


def backward_constraint_violations(timeline: Timeline) -> List[str]:
    """Scan the backward-pass precedence constraints task by task.

    Independent of the graph's edge list: it rebuilds the required
    combine/expert/dispatch/AT/all-reduce relations from task identities.
    """
    g = timeline.graph
    L = g.config.L
    R = _degree(g)
    bwd = Phase.BACKWARD
    idx = g.index()
    S, E = timeline.start, timeline.end

    def at(l, r):
        return idx.get((TaskKind.AT, bwd, l, r)) or idx.get((TaskKind.AT, bwd, l, 1))

    chunks: Dict[int, list] = defaultdict(list)
    for t in g.tasks:
        if t.kind is TaskKind.AR_CHUNK:
            chunks[t.block].append(t)
    out = []

    def need(after, before, tag):
        # relations whose tasks are absent from a partial graph are skipped
        if after is None or before is None:
            return
        if S[after.id] < E[before.id]:
            out.append(f"{tag}: {after.label} starts at {S[after.id]} before {before.label} ends at {E[before.id]}")

    for l in range(1, L + 1):
        for r in range(1, R + 1):
            c = idx.get((TaskKind.COMBINE, bwd, l, r))
            e = idx.get((TaskKind.EXP, bwd, l, r))
            d = idx.get((TaskKind.DISPATCH, bwd, l, r))
            if l > 1:
                need(idx.get((TaskKind.COMBINE, bwd, l - 1, r)), at(l, r), "AT->C")
            need(e, c, "C->E")
            need(d, e, "E->D")
            need(at(l, r), d, "D->AT")
            for chunk in chunks[l]:
                need(chunk, at(l, r), "AT->AR")
    return out


def order_violations(timeline: Timeline) -> List[str]:
    """Same-kind tasks of a phase must start in the fixed issue order."""
    g = timeline.graph
    out = []
    for seq in (g.compute_seq, g.comm_seq):
        groups: Dict[Tuple[TaskKind, Phase], List[int]] = defaultdict(list)
        for tid in seq:
            t = g.tasks[tid]
            groups[(t.kind, t.phase)].append(tid)
        for key, ids in groups.items():
            for a, b in zip(ids, ids[1:]):
                if timeline.start[b] < timeline.start[a]:
                    out.append(f"{key}: {g.tasks[b].label} starts before {g.tasks[a].label}")
    return out


def priority_violations(timeline: Timeline) -> List[str]:
    """An AR chunk may only start while the next A2A task in issue order is not ready.

    A2A tasks keep their fixed order, so a later A2A being ready does not
    block the pool; only the head of the A2A order does.
    """
    g = timeline.graph
    preds = g.preds()
    S, E = timeline.start, timeline.end
    a2a = [i for i in g.comm_seq if g.tasks[i].kind in (TaskKind.DISPATCH, TaskKind.COMBINE)]
    starts = [S[i] for i in a2a]
    out = []
    for c in g.pool:
        s = S[c]
        k = bisect.bisect_left(starts, s)
        # zero-length A2A tasks issued at the same instant went first
        while k < len(a2a) and S[a2a[k]] == s and E[a2a[k]] == s:
            k += 1
        if k == len(a2a):
            continue
        head = a2a[k]
        ready = max((E[p] for p in preds[head]), default=0.0)
        if ready <= s:
            out.append(f"{g.tasks[c].label} started at {s} while {g.tasks[head].label} was waiting")
    return out


def check_timeline(timeline: Timeline) -> None:
    """Raise :class:`TimelineError` listing every broken schedule invariant."""
    problems = (
        resource_violations(timeline)
        + duration_violations(timeline)
        + dependency_violations(timeline)
        + backward_constraint_violations(timeline)
        + order_violations(timeline)
        + priority_violations(timeline)
    )
    if problems:
        shown = "\n".join(problems[:10])
        raise TimelineError(f"{len(problems)} schedule violations:\n{shown}")
