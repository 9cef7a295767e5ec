"""Pure-Python event loop, used when the compiled kernel is unavailable.

Semantics (shared with ``_kernel.pyx``):

* the compute resource issues ``compute_seq`` strictly in order;
* the comm resource issues the head of ``comm_seq`` if its predecessors are
  done, otherwise the oldest ready task of the low-priority pool FIFO;
* tasks never preempt; completions at the same instant are applied
  (compute first) before anything new is dispatched, and a zero-length
  compute task completes before the comm resource picks its next task.
"""

from __future__ import annotations

import math


def run(dur, pred_count, succ_ptr, succ_idx, compute_seq, comm_seq, in_pool):
    dur = [float(x) for x in dur]
    succ_ptr = [int(x) for x in succ_ptr]
    succ_idx = [int(x) for x in succ_idx]
    compute_seq = [int(x) for x in compute_seq]
    comm_seq = [int(x) for x in comm_seq]
    in_pool = [bool(x) for x in in_pool]
    n = len(dur)
    nc, nm = len(compute_seq), len(comm_seq)
    start = [math.nan] * n
    end = [math.nan] * n
    remaining = [int(x) for x in pred_count]
    fifo = [i for i in range(n) if in_pool[i] and remaining[i] == 0]
    qhead = cp = mp = done = 0
    run_c = run_m = -1
    now = end_c = end_m = 0.0

    while done < n:
        if run_c < 0 and cp < nc:
            t = compute_seq[cp]
            if remaining[t] == 0:
                start[t] = now
                end[t] = end_c = now + dur[t]
                run_c = t
                cp += 1
        # a zero-length compute task finishes before comm picks its next task
        if run_m < 0 and not (run_c >= 0 and end_c == now):
            if mp < nm and remaining[comm_seq[mp]] == 0:
                t = comm_seq[mp]
                mp += 1
            elif qhead < len(fifo):
                t = fifo[qhead]
                qhead += 1
            else:
                t = -1
            if t >= 0:
                start[t] = now
                end[t] = end_m = now + dur[t]
                run_m = t
        if run_c < 0 and run_m < 0:
            break
        now = end_c if run_c >= 0 and (run_m < 0 or end_c <= end_m) else end_m
        finished = []
        if run_c >= 0 and end_c == now:
            finished.append(run_c)
            run_c = -1
        if run_m >= 0 and end_m == now:
            finished.append(run_m)
            run_m = -1
        for t in finished:
            done += 1
            for j in range(succ_ptr[t], succ_ptr[t + 1]):
                s = succ_idx[j]
                remaining[s] -= 1
                if remaining[s] == 0 and in_pool[s]:
                    fifo.append(s)
    return start, end, done
