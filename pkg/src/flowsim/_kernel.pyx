# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loop; must stay step-for-step identical to _pykernel.run."""

import numpy as np


def run(double[::1] dur, int[::1] pred_count, long long[::1] succ_ptr,
        int[::1] succ_idx, int[::1] compute_seq, int[::1] comm_seq,
        unsigned char[::1] in_pool):
    cdef Py_ssize_t n = dur.shape[0]
    cdef Py_ssize_t nc = compute_seq.shape[0]
    cdef Py_ssize_t nm = comm_seq.shape[0]
    start_arr = np.full(n, np.nan)
    end_arr = np.full(n, np.nan)
    remaining_arr = np.array(pred_count, dtype=np.intc, copy=True)
    fifo_arr = np.empty(max(n, 1), dtype=np.intc)
    cdef double[::1] start = start_arr
    cdef double[::1] end = end_arr
    cdef int[::1] remaining = remaining_arr
    cdef int[::1] fifo = fifo_arr
    cdef Py_ssize_t qhead = 0, qtail = 0, cp = 0, mp = 0, done = 0
    cdef Py_ssize_t i, j, t
    cdef int run_c = -1, run_m = -1, s, k
    cdef double now = 0.0, end_c = 0.0, end_m = 0.0

    for i in range(n):
        if in_pool[i] and remaining[i] == 0:
            fifo[qtail] = <int>i
            qtail += 1

    while done < n:
        if run_c < 0 and cp < nc:
            t = compute_seq[cp]
            if remaining[t] == 0:
                start[t] = now
                end[t] = now + dur[t]
                end_c = end[t]
                run_c = <int>t
                cp += 1
        # a zero-length compute task finishes before comm picks its next task
        if run_m < 0 and not (run_c >= 0 and end_c == now):
            if mp < nm and remaining[comm_seq[mp]] == 0:
                t = comm_seq[mp]
                mp += 1
            elif qhead < qtail:
                t = fifo[qhead]
                qhead += 1
            else:
                t = -1
            if t >= 0:
                start[t] = now
                end[t] = now + dur[t]
                end_m = end[t]
                run_m = <int>t
        if run_c < 0 and run_m < 0:
            break
        if run_c >= 0 and (run_m < 0 or end_c <= end_m):
            now = end_c
        else:
            now = end_m
        for k in range(2):
            if k == 0:
                if run_c < 0 or end_c != now:
                    continue
                t = run_c
                run_c = -1
            else:
                if run_m < 0 or end_m != now:
                    continue
                t = run_m
                run_m = -1
            done += 1
            for j in range(succ_ptr[t], succ_ptr[t + 1]):
                s = succ_idx[j]
                remaining[s] -= 1
                if remaining[s] == 0 and in_pool[s]:
                    fifo[qtail] = s
                    qtail += 1
    return start_arr, end_arr, done
