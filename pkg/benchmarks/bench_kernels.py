"""Compare the compiled xoshiro256** kernel with its pure-Python twin.

Run with ``python3 benchmarks/bench_kernels.py [draws]``.  Both backends
must produce the same stream; the script checks that before timing.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from fredholm_se import _backend, _fallback


def bench(n: int, repeat: int = 3) -> dict:
    if _backend.compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    seed_state = np.array([1, 2, 3, 4], dtype=np.uint64)
    a, b = seed_state.copy(), seed_state.copy()
    if not np.array_equal(_backend.compiled.xoshiro_fill(a, n), _fallback.xoshiro_fill(b, n)):
        raise SystemExit("backends disagree")
    timings = {}
    for name, fn in (("compiled", _backend.compiled.xoshiro_fill), ("python", _fallback.xoshiro_fill)):
        best = min(timeit.repeat(lambda: fn(seed_state.copy(), n), number=1, repeat=repeat))
        timings[name] = best
    return {
        "draws": n,
        "compiled_seconds": timings["compiled"],
        "python_seconds": timings["python"],
        "speedup": timings["python"] / timings["compiled"],
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("draws", nargs="?", type=int, default=200_000)
    args = parser.parse_args()
    print(json.dumps(bench(args.draws), indent=2))


if __name__ == "__main__":
    main()
