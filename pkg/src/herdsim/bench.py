"""Timing of the compiled kernels against the numpy fallback.

    python -m herdsim.bench [--sizes 256 1024 4096] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import _backend
from ._pykernels import SATURATING


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def compare(sizes=(256, 1024, 4096), repeats: int = 5, cells=(512, 2048)) -> list[dict]:
    """Best-of-``repeats`` seconds per call for each available backend."""
    rng = np.random.default_rng(0)
    rows = []
    previous = _backend.name()
    try:
        for n in sizes:
            x = rng.normal(size=(n, 1))
            w = np.full(n, 1.0 / n)
            row = {"kernel": "interaction_sum", "size": n}
            for b in _backend.available():
                _backend.use(b)
                row[b] = _best_of(lambda: _backend.interaction_sum(SATURATING, -1.0, 1.0, x, w, x), repeats)
            rows.append(row)
        for n in cells:
            rho0 = np.exp(-np.linspace(-4, 4, n) ** 2)
            a = rng.uniform(0.1, 1.0, n - 1)
            b_ = rng.uniform(0.1, 1.0, n - 1)
            row = {"kernel": "fp_step x100", "size": n}
            for b in _backend.available():
                _backend.use(b)

                def hundred():
                    rho = rho0.copy()
                    for _ in range(100):
                        _backend.fp_step(rho, a, b_, 0.01, 1e-3)

                row[b] = _best_of(hundred, repeats)
            rows.append(row)
    finally:
        _backend.use(previous)
    return rows


def format_rows(rows: list[dict]) -> str:
    backends = _backend.available()
    head = f"{'kernel':<16}{'size':>7}" + "".join(f"{b + ' [ms]':>14}" for b in backends)
    if "cython" in backends:
        head += f"{'speedup':>10}"
    lines = [head]
    for r in rows:
        line = f"{r['kernel']:<16}{r['size']:>7}" + "".join(f"{1e3 * r[b]:>14.3f}" for b in backends)
        if "cython" in backends:
            line += f"{r['python'] / r['cython']:>10.1f}"
        lines.append(line)
    return "\n".join(lines)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    print(format_rows(compare(args.sizes, args.repeats)))
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
