"""Monte-Carlo Gram error against the analytic Gaussian overlap, as a function of M.

    python3 scripts/gram_sweep.py --repeats 40
"""

import argparse

import numpy as np

from setfield.encode import ObjectSet, encode_field
from setfield.kernels import KernelSpec, gaussian_gram, kernel_matrix
from setfield.sampling import SamplerConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--samples", type=int, nargs="+", default=[1000, 4000, 16000, 64000])
    p.add_argument("--repeats", type=int, default=40)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--proposal-sigma", type=float, default=None)
    args = p.parse_args(argv)

    spec = KernelSpec("gaussian", args.sigma, 2)
    centers = np.array([[0.0, 0.0], [0.15, 0.0], [0.0, 0.3], [0.4, 0.4]])
    exact = gaussian_gram(spec, centers)
    cfg = SamplerConfig(proposal_sigma=args.proposal_sigma)
    means = []
    print("M,mean_frobenius_error,std")
    for m in args.samples:
        errs = []
        for seed in range(args.repeats):
            s = encode_field(ObjectSet(centers), spec, cfg, m, seed)
            k = kernel_matrix(spec, s.points, centers)
            errs.append(np.linalg.norm(k.T @ (k * s.weights[:, None]) - exact))
        means.append(np.mean(errs))
        print(f"{m},{np.mean(errs):.6e},{np.std(errs):.6e}")
    slope = np.polyfit(np.log(args.samples), np.log(means), 1)[0]
    print(f"# log-log slope {slope:.3f} (1/sqrt(M) is -0.5)")


if __name__ == "__main__":
    main()
