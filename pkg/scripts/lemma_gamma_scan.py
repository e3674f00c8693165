"""Scan the |a|^p splitting inequality over p and report where it fails.

For each p the script draws random (a, b, eps) and records the violation
rate and the largest LHS/RHS ratio.  At eps = 1 the inequality reduces to
2^{p-1} <= 1 + c_p for a = 2b, which fails for every p > 2 with the stated c_p.
"""
import argparse

import numpy as np

from hfrac.verifier import LemmaGammaParams, check_lemma_gamma


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print("p,c_p,violation_rate,max_ratio,eps1_margin")
    for p in (1.25, 1.5, 1.75, 2.0, 2.01, 2.5, 3.0, 4.0, 5.0, 8.0, 10.0):
        a, b = rng.uniform(-10, 10, (2, args.samples))
        eps = 1.0 - rng.uniform(0, 1, args.samples)
        ok, slack = check_lemma_gamma(a, b, eps, p)
        lhs = np.abs(a) ** p
        ratio = np.max(lhs / (lhs + slack))
        cp = LemmaGammaParams(p).c_p
        print(f"{p},{cp:.6g},{np.mean(~ok):.4g},{ratio:.6g},{1 + cp - 2 ** (p - 1):.6g}")


if __name__ == "__main__":
    main()
