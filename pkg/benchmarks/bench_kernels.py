"""Compiled vs pure-NumPy kernel timings.

Usage::

    python benchmarks/bench_kernels.py [--sizes 20 40 80 160] [--repeat 200]

Times the two kernel backends head to head, then one full single-task
log-density gradient under each backend (run in a subprocess so the
backend switch happens at import).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

GRADIENT_SNIPPET = """
import json, sys, timeit
import numpy as np
import hiergp
from hiergp.datagen import TaskDataset
from hiergp.model.targets import STLTarget
out = {}
for n in map(int, sys.argv[1:-1]):
    r = np.random.default_rng(n)
    t = TaskDataset((0, 1), 0.5, r.uniform(size=(n, 2)), r.normal(size=n))
    tgt = STLTarget(t)
    u = r.uniform(-1, 1, tgt.dim)
    reps = int(sys.argv[-1])
    out[n] = min(timeit.repeat(lambda: tgt(u), number=reps, repeat=3)) / reps
print(json.dumps({"backend": hiergp.BACKEND, "times": out}))
"""


def bench_kernels(sizes, repeat):
    from hiergp import _ckernels as ck
    from hiergp import _kernels_py as py

    rows = []
    for n in sizes:
        x = np.random.default_rng(n).uniform(size=(n, 2))
        t_c = min(timeit.repeat(lambda: ck.matern32_sym_with_grad(x, 1.1, 0.4),
                                number=repeat, repeat=3)) / repeat
        t_p = min(timeit.repeat(lambda: py.matern32_sym_with_grad(x, 1.1, 0.4),
                                number=repeat, repeat=3)) / repeat
        rows.append((n, t_c, t_p))
    return rows


def bench_gradient(sizes, repeat, pure):
    env = dict(os.environ, HIERGP_PURE_PYTHON="1" if pure else "0")
    cmd = [sys.executable, "-c", GRADIENT_SNIPPET, *map(str, sizes), str(repeat)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 40, 80, 160])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    print("Gram matrix + lengthscale derivative (matern32_sym_with_grad)")
    print(f"{'n':>6} {'compiled us':>12} {'numpy us':>10} {'speedup':>8}")
    for n, tc, tp in bench_kernels(args.sizes, args.repeat):
        print(f"{n:>6} {tc * 1e6:>12.1f} {tp * 1e6:>10.1f} {tp / tc:>8.2f}")

    reps = max(args.repeat // 10, 5)
    fast = bench_gradient(args.sizes, reps, pure=False)
    slow = bench_gradient(args.sizes, reps, pure=True)
    print("\nSingle-task log density + gradient")
    print(f"{'n':>6} {fast['backend'] + ' us':>12} {slow['backend'] + ' us':>10} {'speedup':>8}")
    for n in args.sizes:
        tf, ts = fast["times"][str(n)], slow["times"][str(n)]
        print(f"{n:>6} {tf * 1e6:>12.1f} {ts * 1e6:>10.1f} {ts / tf:>8.2f}")


if __name__ == "__main__":
    main()
