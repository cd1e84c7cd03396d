"""Compare the numba and numpy attention kernels.

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Kernel timings call both implementations directly (the value-weighted sum
is a BLAS matmul in both, so it is not listed). The end-to-end timing
runs one toy edit window in a subprocess per backend, since the active
backend is fixed at import time by ATTNEDIT_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from attnedit import _kernels

SHAPES = [  # heads, queries, keys, head_dim
    (2, 16, 8, 8),
    (2, 64, 128, 8),
    (8, 256, 77, 40),
    (8, 1024, 2048, 40),
]

E2E = """
import time
import numpy as np
from attnedit import _kernels
from attnedit.attention import build_toy_denoiser
from attnedit.core import WordTokenizer, align_edit_words, build_schedule
from attnedit.pipeline import EditJob, edit_window
tok = WordTokenizer()
src, edit = tok.encode("a white fox on the grass"), tok.encode("a yellow duck on the water")
spec = align_edit_words(src, edit, [("white", "yellow"), ("fox", "duck"), ("grass", "water")])
x = np.random.default_rng(0).integers(0, 256, (8, 32, 32, 3), dtype=np.uint8)
job = EditJob(x, src, edit, spec, build_schedule(10), build_toy_denoiser(0, (16, 8)))
edit_window(job)
t0 = time.perf_counter()
edit_window(job)
print(_kernels.active.name, time.perf_counter() - t0)
"""


def bench(fn, repeat):
    fn()  # warm up / compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true", help="also time one toy edit window per backend")
    args = ap.parse_args()

    if _kernels.numba_impl is None:
        sys.exit("numba is not importable; nothing to compare")
    impls = [_kernels.numpy_impl, _kernels.numba_impl]
    rng = np.random.default_rng(0)

    print(f"{'kernel':<10}{'shape':>22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for h, nq, nk, d in SHAPES:
        q, k = rng.standard_normal((h, nq, d)), rng.standard_normal((h, nk, d))
        mask = rng.random(nq) > 0.5
        a, b = rng.random((h, nq, nk)).astype(np.float32), rng.random((h, nq, nk)).astype(np.float32)
        cases = {
            "softmax": lambda m: m.softmax_probs(q, k, d ** -0.5),
            "select": lambda m: m.select_rows(mask, a, b),
        }
        for name, call in cases.items():
            times = [bench(lambda m=m: call(m), args.repeat) * 1e3 for m in impls]
            diff = float(np.abs(np.asarray(call(impls[0]), np.float64) - np.asarray(call(impls[1]), np.float64)).max())
            shape = f"{h}x{nq}x{nk}x{d}"
            print(f"{name:<10}{shape:>22}{times[0]:>12.3f}{times[1]:>12.3f}{times[0] / times[1]:>9.2f}x{diff:>12.1e}")

    if args.end_to_end:
        print()
        for flag in ("1", "0"):
            env = dict(os.environ, ATTNEDIT_DISABLE_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
            name, secs = out.stdout.split()
            print(f"edit_window (8 frames, T=10, 32x32) with {name:<6} {float(secs):.2f} s")


if __name__ == "__main__":
    main()
