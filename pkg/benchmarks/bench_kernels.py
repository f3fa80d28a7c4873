"""Benchmark the compiled kernel path against the pure-numpy fallback.

Runs each hot kernel in-process (both implementations are importable side by
side), then times a short end-to-end training loop twice in subprocesses: once
normally and once with DIFFROUTER_NO_NUMBA=1.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from diffrouter import _kernels


def _time(fn, repeats):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return min(best), statistics.median(best)


def bench_kernels(repeats: int) -> None:
    if not _kernels.USING_NUMBA:
        print("numba path inactive (DIFFROUTER_NO_NUMBA set or numba missing); "
              "kernel-level comparison skipped")
        return
    rng = np.random.default_rng(0)
    z = rng.standard_normal((512, 256))
    h = rng.standard_normal((512, 256))
    w = rng.standard_normal((256, 256))
    b = rng.standard_normal(256)
    a = np.ascontiguousarray(rng.standard_normal((250, 16)))
    bb = np.ascontiguousarray(rng.standard_normal((250, 16)))
    p = rng.standard_normal((256, 256))
    g = rng.standard_normal((256, 256))
    m, v = np.zeros_like(p), np.zeros_like(p)

    cases = [
        ("silu 512x256", lambda: _kernels._silu_nb(z), lambda: _kernels._silu_np(z)),
        ("silu_grad 512x256", lambda: _kernels._silu_grad_nb(z),
         lambda: _kernels._silu_grad_np(z)),
        ("affine 512x256x256", lambda: _kernels._affine_nb(h, w, b),
         lambda: _kernels._affine_np(h, w, b)),
        ("adamw 256x256", lambda: _kernels._adamw_update_nb(
            p, g, m, v, 1e-4, 0.9, 0.9, 1e-8, 0.0, 1),
         lambda: _kernels._adamw_update_np(p, g, m, v, 1e-4, 0.9, 0.9, 1e-8, 0.0, 1)),
        ("mmd_terms 250x250x16", lambda: _kernels._mmd_terms_nb(a, bb, 0.1),
         lambda: _kernels._mmd_terms_np(a, bb, 0.1)),
    ]
    print(f"{'kernel':24s} {'numba best':>12s} {'numpy best':>12s} {'speedup':>8s}")
    for name, f_nb, f_np in cases:
        f_nb()  # trigger compilation outside the timed region
        t_nb, _ = _time(f_nb, repeats)
        t_np, _ = _time(f_np, repeats)
        print(f"{name:24s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us "
              f"{t_np / t_nb:7.2f}x")


_TRAIN_SNIPPET = """
import time
import numpy as np
from diffrouter.datagen import make_star_instance
from diffrouter.schedules import build_diffusion_schedule
from diffrouter.train import TrainConfig, train
topo, datasets, _, _ = make_star_instance(3, 2, 2000, seed=0, M=100)
sch = build_diffusion_schedule(100)
cfg = TrainConfig(regime="paired-only", steps=50, batch_size=128,
                  hidden=(128, 128, 128), seed=0)
train(cfg, topo, datasets, sch)  # warm compilation caches
t0 = time.perf_counter()
cfg = TrainConfig(regime="paired-only", steps=500, batch_size=128,
                  hidden=(128, 128, 128), seed=0)
train(cfg, topo, datasets, sch)
print(f"{(time.perf_counter() - t0) / 500 * 1e3:.3f}")
"""


def bench_training() -> None:
    print("\nend-to-end: 500 paired training steps, hidden 128x128x128, d=2")
    for label, extra_env in (("numba", {}), ("numpy", {"DIFFROUTER_NO_NUMBA": "1"})):
        env = dict(os.environ, **extra_env)
        out = subprocess.run([sys.executable, "-c", _TRAIN_SNIPPET], env=env,
                             capture_output=True, text=True)
        if out.returncode != 0:
            print(f"{label}: failed\n{out.stderr}")
            continue
        print(f"{label:6s} {float(out.stdout.strip()):8.3f} ms/step")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    bench_kernels(args.repeats)
    bench_training()


if __name__ == "__main__":
    main()
