"""Compare the compiled kernel core against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from uqseg._kernels import _fallback

try:
    from uqseg._kernels import _core
except ImportError:
    _core = None

CONV_SHAPES = [
    ((12, 1, 64, 64), (8, 1, 3, 3)),
    ((12, 8, 64, 64), (8, 8, 3, 3)),
    ((12, 8, 32, 32), (16, 8, 3, 3)),
    ((12, 16, 32, 32), (16, 16, 3, 3)),
    ((12, 16, 16, 16), (32, 16, 3, 3)),
    ((12, 32, 16, 16), (32, 32, 3, 3)),
    ((12, 48, 32, 32), (16, 48, 3, 3)),
    ((12, 24, 64, 64), (8, 24, 3, 3)),
    ((12, 8, 64, 64), (3, 8, 3, 3)),
]


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench_backend(mod, repeats, rng):
    total = {"conv_fwd": 0.0, "conv_bwd": 0.0}
    for xs, ws in CONV_SHAPES:
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        b = rng.normal(size=ws[0])
        gy = rng.normal(size=(xs[0], ws[0], xs[2], xs[3]))
        total["conv_fwd"] += timeit(lambda: mod.conv3x3_fwd(x, w, b), repeats)
        total["conv_bwd"] += timeit(lambda: mod.conv3x3_bwd(x, w, gy), repeats)
    x = rng.normal(size=(12, 16, 64, 64))
    y, idx = mod.maxpool2_fwd(x)
    total["maxpool"] = timeit(lambda: mod.maxpool2_fwd(x), repeats)
    total["upsample"] = timeit(lambda: mod.upsample2_fwd(mod.maxpool2_fwd(x)[0]), repeats)
    f = rng.uniform(0, 1000, size=(256, 256))
    total["edt_pass"] = timeit(lambda: mod.edt_sq_pass(f), repeats)
    return total


_STEP_SNIPPET = """
import time
import numpy as np
from uqseg.network import EvidenceNet, NetworkConfig
from uqseg import _kernels

net = EvidenceNet(NetworkConfig(3), seed=0)
x = np.random.default_rng(0).uniform(size=(12, 64, 64))

def step():
    out = net.forward(x).sum()
    out.backward()
    for p in net.parameters():
        p.grad = None

step()
t0 = time.perf_counter()
for _ in range({repeats}):
    step()
print(_kernels.backend_name(), (time.perf_counter() - t0) / {repeats} * 1000.0)
"""


def bench_training_step(repeats):
    """Full network forward+backward per backend, in fresh interpreters."""
    import os
    import subprocess
    import sys

    rows = {}
    variants = [("numpy", {"UQSEG_NO_EXT": "1"})] + ([("cython", {})] if _core else [])
    for name, extra_env in variants:
        proc = subprocess.run(
            [sys.executable, "-c", _STEP_SNIPPET.format(repeats=repeats)],
            capture_output=True, text=True, env={**os.environ, **extra_env},
        )
        backend, ms = proc.stdout.split()
        assert backend == name, f"expected backend {name}, got {backend}"
        rows[name] = float(ms)
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = [("numpy", _fallback)] + ([("cython", _core)] if _core else [])
    results = {name: bench_backend(mod, args.repeats, rng) for name, mod in backends}

    kernels = list(next(iter(results.values())).keys())
    header = f"{'kernel':<12}" + "".join(f"{name:>12}" for name in results)
    print(header)
    print("-" * len(header))
    for k in kernels:
        row = f"{k:<12}"
        for name in results:
            row += f"{results[name][k]:>10.2f}ms"
        print(row)

    steps = bench_training_step(args.repeats)
    row = f"{'net fwd+bwd':<12}"
    for name in results:
        row += f"{steps.get(name, float('nan')):>10.2f}ms"
    print(row)
    if _core is None:
        print("\ncompiled core not built; run: python3 setup.py build_ext --inplace")


if __name__ == "__main__":
    main()
