#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Times the hot kernels at a few model scales, then a full training step
(forward + loss + backward + update) with each backend forced in turn.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from pdrlm import kernels


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def bench_kernels(repeats):
    shapes = [
        ("char-scale", dict(batch=32, n=48, steps=40, vocab=30)),
        ("word-scale", dict(batch=20, n=256, steps=35, vocab=5000)),
    ]
    backends = [("python", kernels.get_backend("python"))]
    try:
        backends.append(("compiled", kernels.get_backend("compiled")))
    except ImportError:
        print("compiled backend not built; benchmarking fallback only")

    for label, dims in shapes:
        batch, n, steps, vocab = (dims[k] for k in
                                  ("batch", "n", "steps", "vocab"))
        rng = np.random.default_rng(0)
        xw = rng.normal(size=(steps * batch, 4 * n))
        wr = rng.normal(size=(n, 4 * n)) * 0.1
        b = rng.normal(size=4 * n)
        h0 = rng.normal(size=(batch, n))
        c0 = rng.normal(size=(batch, n))
        ghc = rng.normal(size=(steps * batch, n))
        logits = rng.normal(size=(steps * batch, vocab)) * 3
        targets = rng.integers(0, vocab, size=steps * batch)
        print(f"\n[{label}] B={batch} n={n} s={steps} |W|={vocab}")
        rows = {}
        for name, k in backends:
            fwd = k.lstm_layer_forward(xw, wr, b, h0, c0, batch)
            rows[name] = {
                "lstm_layer fwd": timeit(
                    lambda: k.lstm_layer_forward(xw, wr, b, h0, c0, batch),
                    repeats),
                "lstm_layer bwd": timeit(
                    lambda: k.lstm_layer_backward(ghc, fwd[2], fwd[3], fwd[1],
                                                  fwd[0], h0, c0, wr, batch),
                    repeats),
                "softmax_rows": timeit(lambda: k.softmax_rows(logits),
                                       repeats),
                "cross_entropy": timeit(
                    lambda: k.cross_entropy_rows(logits, targets), repeats),
            }
        for op in next(iter(rows.values())):
            line = f"  {op:<16}"
            for name, _ in backends:
                line += f"  {name} {rows[name][op]:8.3f} ms"
            if len(rows) == 2:
                line += f"  speedup {rows['python'][op] / rows['compiled'][op]:.2f}x"
            print(line)


def bench_training_step(repeats):
    from pdrlm.autodiff import backward
    from pdrlm.corpus import TokenWindow
    from pdrlm.model import (RegularizationSpec, compute_loss,
                             forward_window, init_params, init_state)
    from pdrlm.optim import OptimizerState, clip_and_step

    print("\n[training step] 3-layer (48,48,32), B=32, s=40, |W|=30, "
          "past-decode on")
    results = {}
    for name in ("python", "compiled"):
        try:
            kernels.get_backend(name)
        except ImportError:
            continue
        saved = kernels._impl
        kernels._impl = kernels.get_backend(name)
        try:
            for attr in ("sigmoid", "softmax_rows", "softmax_rows_backward",
                         "cross_entropy_rows", "cross_entropy_rows_backward",
                         "lstm_gates", "lstm_gates_backward",
                         "lstm_layer_forward", "lstm_layer_backward"):
                setattr(kernels, attr, getattr(kernels._impl, attr))
            rng = np.random.default_rng(0)
            params, head = init_params(30, (48, 48, 32), 32, rng)
            window = TokenWindow(rng.integers(0, 30, (32, 40)),
                                 rng.integers(0, 30, (32, 40)))
            state = init_state(params, 32)
            reg = RegularizationSpec(lambda_pdr=0.1)
            opt = OptimizerState(lr=1.0, clip=0.25)
            allp = params.all() + head.all()

            def step():
                trace = forward_window(params, head, window, state, "train",
                                       want_probs=True)
                loss = compute_loss(trace, window, reg)
                clip_and_step(allp, backward(loss.node), opt)

            results[name] = timeit(step, repeats)
            print(f"  {name:<9} {results[name]:8.2f} ms/step")
        finally:
            kernels._impl = saved
            for attr in ("sigmoid", "softmax_rows", "softmax_rows_backward",
                         "cross_entropy_rows", "cross_entropy_rows_backward",
                         "lstm_gates", "lstm_gates_backward",
                         "lstm_layer_forward", "lstm_layer_backward"):
                setattr(kernels, attr, getattr(saved, attr))
    if len(results) == 2:
        print(f"  speedup   {results['python'] / results['compiled']:8.2f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeats)
    bench_training_step(args.repeats)


if __name__ == "__main__":
    main()
