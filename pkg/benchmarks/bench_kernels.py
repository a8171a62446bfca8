#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the hot paths of robust training — the stacked model forward, the
stacked backward, and a full batched inner-ascent run — in a fresh
subprocess per backend (GRAPHDRO_KERNEL pins the selection), so neither
import order nor BLAS threading state leaks between measurements.

    python benchmarks/bench_kernels.py [--nodes 100] [--batch 32] [--repeats 50]

The small-instance regime (try --nodes 9 --batch 1) is where the
compiled kernels pay off; at batch scale both backends are bound by the
same BLAS calls.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, time
import numpy as np
from graphdro import LossSpec, gnn_architecture, init_model
from graphdro._backend import BACKEND, kernels
from graphdro.datagen import gen_graph, gen_samples
from graphdro.loss import stack_samples
from graphdro.robust import ascend_batch

nodes, batch, repeats = NODES, BATCH, REPEATS
g = gen_graph("grid2d", nodes)
samples = gen_samples(g, batch, 4, 0.2, 0.3, seed=0)
feats, labels, observed = stack_samples(samples)
model = init_model(gnn_architecture(4, k_taps=2, hidden_dim=8, n_layers=2), seed=0)
hs = model.coefficients
acts = model.activation_codes()
d_out = np.ascontiguousarray(
    np.random.default_rng(0).standard_normal((nodes, batch, 1))
)

def bench(fn, n):
    fn()
    tic = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - tic) / n

out, taps, masks = kernels.model_forward(g.weights, feats, hs, acts)
results = {
    "backend": BACKEND,
    "forward": bench(lambda: kernels.model_forward(g.weights, feats, hs, acts), repeats),
    "backward": bench(
        lambda: kernels.model_backward(g.weights, hs, acts, taps, masks, d_out), repeats
    ),
    "ascent_10_steps": bench(
        lambda: ascend_batch(model, g, feats, labels, observed, 3.5, 10.0,
                             LossSpec(kind="huber"), steps=10, step_size=0.1),
        max(3, repeats // 10),
    ),
}
print(json.dumps(results))
"""


def run_backend(backend, nodes, batch, repeats):
    code = (
        WORKER.replace("NODES", str(nodes))
        .replace("BATCH", str(batch))
        .replace("REPEATS", str(repeats))
    )
    env = dict(os.environ, GRAPHDRO_KERNEL=backend)
    proc = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    if proc.returncode != 0:
        return None
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--nodes", type=int, default=100)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args()

    results = {}
    for backend in ("python", "cython"):
        timing = run_backend(backend, args.nodes, args.batch, args.repeats)
        if timing is None:
            print(f"{backend}: unavailable")
            continue
        results[backend] = timing

    ops = ["forward", "backward", "ascent_10_steps"]
    header = f"{'backend':<8}  " + "  ".join(f"{op:>16}" for op in ops)
    print(f"\nnodes={args.nodes} batch={args.batch}")
    print(header)
    print("-" * len(header))
    for name, timing in results.items():
        print(f"{name:<8}  " + "  ".join(f"{timing[op] * 1e3:>13.3f} ms" for op in ops))
    if {"python", "cython"} <= results.keys():
        speedups = [results["python"][op] / results["cython"][op] for op in ops]
        print("speedup (python/cython): " + "  ".join(f"{s:.2f}x" for s in speedups))


if __name__ == "__main__":
    main()
