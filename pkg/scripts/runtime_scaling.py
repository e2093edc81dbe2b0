"""Decode wall time against the number of samples at a fixed count.

    python3 scripts/runtime_scaling.py --count 10
"""

import argparse
import time

import numpy as np

from setfield.decode import decode_set
from setfield.encode import ObjectSet, encode_field
from setfield.kernels import KernelSpec
from setfield.sampling import SamplerConfig
from setfield.scenes import separated_positions


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--samples", type=int, nargs="+", default=[1000, 4000, 16000, 64000])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=3)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    spec = KernelSpec("gaussian", 0.05, 2)
    objects = ObjectSet(separated_positions(rng, args.count, 2, 0.3), rng.normal(size=(args.count, 4)))
    # warm-up: loads the compiled mixture kernel
    decode_set(encode_field(objects, spec, SamplerConfig(), 1000, 0), spec)
    times = []
    print("M,decode_ms")
    for m in args.samples:
        s = encode_field(objects, spec, SamplerConfig(), m, 0)
        best = np.inf
        for _ in range(args.repeats):
            t = time.perf_counter()
            decode_set(s, spec)
            best = min(best, time.perf_counter() - t)
        times.append(best)
        print(f"{m},{1e3 * best:.2f}")
    coef = np.polyfit(args.samples, times, 1)
    resid = np.array(times) - np.polyval(coef, args.samples)
    r2 = 1 - np.sum(resid ** 2) / np.sum((np.array(times) - np.mean(times)) ** 2)
    print(f"# linear fit: {1e6 * coef[0]:.3f} us per sample, R^2 {r2:.4f}")


if __name__ == "__main__":
    main()
