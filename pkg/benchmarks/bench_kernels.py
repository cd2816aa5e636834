"""Benchmark the compiled kernels against the numpy fallback.

Times the convolution/pooling hot loops and a full small-CNN forward+backward
step at several batch sizes, then prints a table with the speed ratio.

    python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from nrt.kernels import available_backends
from nrt.models import build_small_cnn
from nrt import tensor as T
from nrt.training import TrainConfig  # noqa: F401  (documents the training context)


def timeit(fn, repeats):
    fn()   # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backend, repeats, batch):
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=(batch, 1, 28, 28)).astype(np.float32)
    w1 = rng.normal(size=(6, 1, 5, 5)).astype(np.float32)
    x2 = rng.normal(size=(batch, 6, 12, 12)).astype(np.float32)
    w2 = rng.normal(size=(16, 6, 5, 5)).astype(np.float32)
    b1 = np.zeros(6, dtype=np.float32)
    b2 = np.zeros(16, dtype=np.float32)
    y1 = backend.conv2d_forward(x1, w1, b1, 1, 0)
    y2 = backend.conv2d_forward(x2, w2, b2, 1, 0)
    dy1 = rng.normal(size=y1.shape).astype(np.float32)
    dy2 = rng.normal(size=y2.shape).astype(np.float32)
    out = {}
    out["conv1 fwd"] = timeit(lambda: backend.conv2d_forward(x1, w1, b1, 1, 0),
                              repeats)
    out["conv2 fwd"] = timeit(lambda: backend.conv2d_forward(x2, w2, b2, 1, 0),
                              repeats)
    out["conv1 bwd"] = timeit(
        lambda: backend.conv2d_backward(x1, w1, dy1, 1, 0, False), repeats)
    out["conv2 bwd"] = timeit(
        lambda: backend.conv2d_backward(x2, w2, dy2, 1, 0, True), repeats)
    py, ps = backend.maxpool2d_forward(y1, 2, 2)
    out["pool fwd"] = timeit(lambda: backend.maxpool2d_forward(y1, 2, 2),
                             repeats)
    dp = rng.normal(size=py.shape).astype(np.float32)
    out["pool bwd"] = timeit(
        lambda: backend.maxpool2d_backward(dp, ps, y1.shape), repeats)
    return out


def bench_model_step(repeats, batch):
    """Full forward+backward through the small CNN with the active backend."""
    rng = np.random.default_rng(1)
    model = build_small_cnn((1, 28, 28), 10, seed=0)
    x = rng.uniform(0, 1, size=(batch, 1, 28, 28)).astype(np.float32)
    labels = rng.integers(0, 10, size=batch)

    def step():
        model.zero_grad()
        with T.Tape():
            loss = T.cross_entropy_loss(model.forward(x), labels)
        T.backward(loss)

    return timeit(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--batches", default="1,64")
    args = parser.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels unavailable; benchmarking numpy only")
    batches = [int(b) for b in args.batches.split(",")]
    for batch in batches:
        print(f"\n=== batch {batch} (best of {args.repeats}, milliseconds)")
        rows = {}
        for name, backend in backends.items():
            rows[name] = bench_kernels(backend, args.repeats, batch)
        kernels_names = list(next(iter(rows.values())))
        header = f"{'kernel':<12}" + "".join(f"{n:>12}" for n in rows)
        if len(rows) == 2:
            header += f"{'numpy/cython':>14}"
        print(header)
        for kname in kernels_names:
            line = f"{kname:<12}"
            for bname in rows:
                line += f"{rows[bname][kname] * 1e3:12.3f}"
            if len(rows) == 2:
                ratio = rows["numpy"][kname] / rows["cython"][kname]
                line += f"{ratio:14.2f}x"
            print(line)

    import nrt.kernels as kk
    for batch in batches:
        ms = bench_model_step(max(5, args.repeats // 3), batch) * 1e3
        print(f"\nfull CNN fwd+bwd step, batch {batch}, active backend "
              f"({kk.BACKEND}): {ms:.2f} ms")


if __name__ == "__main__":
    main()
