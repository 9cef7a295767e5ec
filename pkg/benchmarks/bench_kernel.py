"""Time the compiled event loop against the pure-Python fallback.

    python3 benchmarks/bench_kernel.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

from flowsim.cost import ar_bytes
from flowsim.engine import BACKENDS, _arrays, simulate
from flowsim.presets import model_preset, profile_preset
from flowsim.schedule import Policy, build_graph

CASES = [
    ("gpt2-tiny-moe", 2, 8),
    ("bert-large-moe", 4, 32),
    ("llama2-moe-l", 4, 64),
    ("deepseek-v2-m", 8, 256),
]


def bench(graph, backend, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        tl = simulate(graph, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, tl


def bench_kernel(arrays, backend, repeat):
    run = BACKENDS[backend].run
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        run(*arrays)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    profile = profile_preset("cluster1")
    print(f"backends: {', '.join(sorted(BACKENDS))}")
    print("end-to-end simulate() / event loop only, best of", args.repeat)
    print(f"{'model':16s} {'R':>2s} {'chunks':>6s} {'tasks':>6s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}"
          f" {'loop py ms':>11s} {'loop cc ms':>11s} {'speedup':>8s}")
    for name, R, chunks in CASES:
        cfg = model_preset(name, R=R)
        graph = build_graph(cfg, Policy.FLOWMOE, ar_bytes(cfg) / chunks, profile)
        py, tl_py = bench(graph, "python", args.repeat)
        if "compiled" in BACKENDS:
            cc, tl_cc = bench(graph, "compiled", args.repeat)
            assert tl_cc.start == tl_py.start and tl_cc.end == tl_py.end, "backends disagree"
            arrays = _arrays(graph)
            kp, kc = bench_kernel(arrays, "python", args.repeat), bench_kernel(arrays, "compiled", args.repeat)
            cells = f"{cc * 1e3:12.2f} {py / cc:7.1f}x {kp * 1e3:11.2f} {kc * 1e3:11.3f} {kp / kc:7.1f}x"
        else:
            cells = f"{'n/a':>12s}"
        print(f"{name:16s} {R:2d} {chunks:6d} {len(graph.tasks):6d} {py * 1e3:10.2f} {cells}")


if __name__ == "__main__":
    main()
