"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--targets 2000] [--sources 50000] [--repeat 3]

Times the nearest-neighbour search and the mask sampler on each backend and
checks that both return identical results.
"""

import argparse
import time

import numpy as np

from xdrecon import kernels
from xdrecon.kspace import generate_mask
from xdrecon.patches import nn_search


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def sampler_inputs(n, draws, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    w = (rng.random(n) * 2**32).astype(np.uint64) + np.uint64(1)
    raw = rng.bit_generator.random_raw(draws).astype(np.uint64)
    return w, raw


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--targets", type=int, default=2000)
    ap.add_argument("--sources", type=int, default=50000)
    ap.add_argument("--dim", type=int, default=49)
    ap.add_argument("--block-size", type=int, default=4096)
    ap.add_argument("--sampler-n", type=int, default=65536)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled extension not available; timing the fallback only")

    rng = np.random.default_rng(0)
    t = rng.random((args.targets, args.dim)).astype(np.float32)
    s = rng.random((args.sources, args.dim)).astype(np.float32)
    w, raw = sampler_inputs(args.sampler_n, args.sampler_n // 4, 1)

    rows, outs = [], {}
    for b in backends:
        mod = kernels.get_backend(b)
        nn_t, nn_out = best_of(lambda: nn_search(t, s, args.block_size, backend=b), args.repeat)
        ws_t, ws_out = best_of(lambda: mod.weighted_sample(w, raw), args.repeat)
        outs[b] = (nn_out, ws_out)
        rows.append((b, nn_t, ws_t))

    m_t, _ = best_of(lambda: generate_mask(256, 256, 4.0, 0.08, mode="points-2d", seed=0), args.repeat)

    print(f"nn_search {args.targets} x {args.sources} dim {args.dim}, weighted_sample n={args.sampler_n} "
          f"draws={args.sampler_n // 4}, best of {args.repeat}")
    print(f"{'backend':<8} {'nn_search [s]':>14} {'sampler [s]':>12}")
    for b, nn_t, ws_t in rows:
        print(f"{b:<8} {nn_t:>14.3f} {ws_t:>12.4f}")
    if len(rows) == 2:
        print(f"speedup  {rows[0][1] / rows[1][1]:>14.2f}x {rows[0][2] / rows[1][2]:>11.2f}x")
        a, c = outs["python"], outs["cython"]
        same = (np.array_equal(a[0][0], c[0][0]) and np.array_equal(a[0][1], c[0][1])
                and np.array_equal(a[1], c[1]))
        print(f"outputs identical across backends: {same}")
    print(f"points-2d 256x256 mask with the active backend ({kernels.BACKEND}): {m_t:.4f} s")


if __name__ == "__main__":
    main()
