"""Compare the numba and pure-numpy kernel backends.

Two measurements:

* kernel micro-benchmarks, calling the ``*_nb`` and ``*_np`` variants
  directly on arrays shaped like one training batch;
* one training epoch end to end, run in a subprocess per backend so the
  ``IMTS_MIXER_DISABLE_NUMBA`` flag takes effect at import time.

Usage: python3 benchmarks/bench_kernels.py [--rows 640] [--dim 64] [--repeat 200]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from imts_mixer import _accel, kernels

EPOCH_SCRIPT = r"""
import json, time
from imts_mixer import kernels
from imts_mixer.config import TrainConfig
from imts_mixer.data import apply_normalize, fit_normalize, split_dataset
from imts_mixer.datagen import GenConfig, generate_dataset
from imts_mixer.training import train
data = generate_dataset("lotka_volterra", GenConfig(n_instances={n}, seed=7))
tr, va, _ = split_dataset(data, 0)
st = fit_normalize(tr)
tr, va = [[apply_normalize(i, st) for i in s] for s in (tr, va)]
cfg = TrainConfig(max_epochs=1)
train(cfg, tr[:32], va[:32])  # warm-up, includes any compilation
t = time.perf_counter()
train(cfg.replace(max_epochs={epochs}), tr, va)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t}}))
"""


def micro(rows, dim, repeat, seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 2 * rows // 64 + 1, size=64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    n = int(offsets[-1])
    s, v = rng.normal(size=(n, dim)), rng.normal(size=(n, dim))
    g = rng.normal(size=(64, dim))
    x, gain = rng.normal(size=(rows, dim)), rng.normal(size=dim)
    gy = rng.normal(size=(rows, dim))

    results = []
    for sfx in ("nb", "np"):
        fwd, bwd = getattr(kernels, f"segment_pool_fwd_{sfx}"), getattr(kernels, f"segment_pool_bwd_{sfx}")
        rf, rb = getattr(kernels, f"rms_norm_fwd_{sfx}"), getattr(kernels, f"rms_norm_bwd_{sfx}")
        pooled, w = fwd(s, v, offsets)
        out, inv = rf(x, gain, 1e-8)
        # First calls above trigger numba compilation; time only warm calls.
        cases = {
            "segment_pool_fwd": lambda: fwd(s, v, offsets),
            "segment_pool_bwd": lambda: bwd(g, w, v, pooled, offsets),
            "rms_norm_fwd": lambda: rf(x, gain, 1e-8),
            "rms_norm_bwd": lambda: rb(gy, x, gain, inv),
        }
        for name, fn in cases.items():
            best = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat
            results.append((name, sfx, best * 1e6))
    return n, results


def epoch(backend, n_instances, epochs):
    env = dict(os.environ)
    env["IMTS_MIXER_DISABLE_NUMBA"] = "0" if backend == "numba" else "1"
    code = EPOCH_SCRIPT.format(n=n_instances, epochs=epochs)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=640)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--instances", type=int, default=500)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--skip-epoch", action="store_true")
    args = parser.parse_args()

    if not _accel.HAVE_NUMBA:
        print("numba is not installed: only the numpy backend is available")
        return 1
    n, results = micro(args.rows, args.dim, args.repeat)
    print(f"kernel micro-benchmarks ({n} pooled rows, {args.rows} norm rows, width {args.dim})")
    print(f"{'kernel':<18} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    by = {(k, b): t for k, b, t in results}
    for name in dict.fromkeys(k for k, _, _ in results):
        nb, npy = by[(name, "nb")], by[(name, "np")]
        print(f"{name:<18} {nb:>10.1f} {npy:>10.1f} {npy / nb:>8.2f}")

    if not args.skip_epoch:
        print(f"\nend to end: {args.epochs} epochs on {args.instances} lotka_volterra instances")
        times = {b: epoch(b, args.instances, args.epochs) for b in ("numba", "numpy")}
        for b, r in times.items():
            print(f"{b:<7} backend={r['backend']:<6} {r['seconds']:.2f}s")
        print(f"speedup {times['numpy']['seconds'] / times['numba']['seconds']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
