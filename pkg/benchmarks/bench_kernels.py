"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes match one training step of a spiking block at batch 16 (4096 rows
for the trunk-sized GELU, 16 x 256 currents for the LIF layer).
"""

import argparse
import importlib
import timeit

import numpy as np

from scno._kernels import _fallback


def _compiled(name):
    try:
        return importlib.import_module(f"scno._kernels.{name}")
    except ImportError:
        return None


def bench(label, fn, repeat, number):
    best = min(timeit.repeat(fn, repeat=repeat, number=number)) / number
    print(f"  {label:<10s} {best * 1e3:9.3f} ms")
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steps", type=int, default=30, help="LIF timesteps")
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)

    cur = rng.normal(0.5, 1.0, size=(16, 256)).astype(np.float32)
    beta = np.full(256, 0.85, np.float32)
    grad = rng.normal(size=cur.shape).astype(np.float32)
    x = rng.normal(size=(4096, 256)).astype(np.float32)
    g = rng.normal(size=x.shape).astype(np.float32)

    lif_c, gelu_c = _compiled("_lif"), _compiled("_gelu")
    cases = [
        ("lif forward", lambda m: (lambda: m.lif_forward(cur, beta, 1.0, 25.0, args.steps,
                                                         False, True)), lif_c, 200),
        ("lif backward", None, lif_c, 200),
        ("gelu forward", lambda m: (lambda: m.gelu_forward(x.reshape(-1))), gelu_c, 10),
        ("gelu backward", lambda m: (lambda: m.gelu_backward(x.reshape(-1), g.reshape(-1))),
         gelu_c, 10),
    ]
    for name, make, compiled, number in cases:
        print(name)
        if name == "lif backward":
            def make(m):
                _, hist, _ = m.lif_forward(cur, beta, 1.0, 25.0, args.steps, False, True)
                return lambda: m.lif_backward(grad, hist, beta, 1.0, 25.0, True)
        t_py = bench("python", make(_fallback), args.repeat, number)
        if compiled is None:
            print("  cython     (extension not built)")
            continue
        t_c = bench("cython", make(compiled), args.repeat, number)
        print(f"  speedup    {t_py / t_c:9.1f}x")


if __name__ == "__main__":
    main()
