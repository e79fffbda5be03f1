"""Time every numerical kernel on each available backend and check they agree.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N] [--size small|large]``.
"""

import argparse
import timeit

import numpy as np

from certlab import kernels
from certlab.haar import sample_haar_batch

SIZES = {"small": (8, 2_000), "large": (32, 10_000)}


def workloads(dim: int, count: int):
    gen = np.random.default_rng(0)
    unitaries = sample_haar_batch(dim, count, gen)
    diag = np.tile([-1.0, 1.0], dim // 2) / dim
    a = kernels.conjugate_diag(unitaries, diag)
    b = kernels.conjugate_diag(unitaries[::-1], diag)
    weights = np.full(dim, float(dim))  # inverse eigenvalues of the maximally mixed state
    values = np.sort(gen.random(count * dim))
    budget = 0.25 * values.sum()
    return {
        "conjugate_diag": lambda be: kernels.conjugate_diag(unitaries, diag, be),
        "pair_kernel": lambda be: kernels.pair_kernel(a, b, weights, be),
        "haar_quadratic": lambda be: kernels.haar_quadratic(unitaries, diag, be),
        "prefix_cutoff": lambda be: kernels.prefix_cutoff(values, budget, be),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size", choices=sorted(SIZES), default="small")
    args = parser.parse_args()
    dim, count = SIZES[args.size]
    backends = kernels.available_backends()
    print(f"dim={dim} batch={count} backends={','.join(backends)} default={kernels.BACKEND}")
    print(f"{'kernel':<16}" + "".join(f"{name + ' ms':>14}" for name in backends) + f"{'speedup':>10}{'max diff':>12}")
    for name, run in workloads(dim, count).items():
        times, outputs = {}, {}
        for be_name, be in backends.items():
            outputs[be_name] = np.asarray(run(be))
            times[be_name] = min(timeit.repeat(lambda: run(be), number=1, repeat=args.repeat)) * 1e3
        ref = outputs["python"]
        diff = max(float(np.max(np.abs(out - ref))) if out.size else 0.0 for out in outputs.values())
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<16}" + "".join(f"{times[b]:>14.3f}" for b in backends) + f"{speedup:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
