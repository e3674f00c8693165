"""delta sweep of the local boundedness constant on solved instances at two resolutions."""
import argparse

import numpy as np

from hfrac.solver import solve_energy_descent
from hfrac.studies import Instance
from hfrac.verifier import check_boundedness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=3.0)
    ap.add_argument("--s", type=float, default=0.6)
    ap.add_argument("--datum", choices=("bump", "source"), default="source")
    ap.add_argument("--resolutions", default="15,21")
    ap.add_argument("--r", type=float, default=1.0)
    args = ap.parse_args()
    deltas = np.round(np.arange(1, 11) / 10, 12)
    print("resolution,delta,c_delta,tail,mean_term,sup")
    for res in (int(x) for x in args.resolutions.split(",")):
        pr = Instance("sweep", args.p, args.s, args.datum).problem(res, collar=0.5)
        u = solve_energy_descent(pr).u
        for rep in check_boundedness(u, np.zeros(3), args.r, pr.params, deltas, pr.f):
            print(f"{res},{rep.instance['delta']},{rep.fitted_c:.6g},{rep.extra['tail_u_plus']:.6g},"
                  f"{rep.extra['mean_u_plus_p']:.6g},{rep.lhs:.6g}")


if __name__ == "__main__":
    main()
