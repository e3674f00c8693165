"""Seminorm dilation law on a smooth bump, on dilated and on independent grids."""
import argparse

import numpy as np

from hfrac.expr import smooth_bump
from hfrac.grid import GridFunction, GridSpec, build_grid
from hfrac.kernelops import KernelParams, gagliardo_seminorm


def seminorm_p(R, res, collar, params):
    grid = build_grid(GridSpec.around_ball(np.zeros(3), R, res, collar=collar))
    e = smooth_bump(np.zeros(3), R)
    u = GridFunction(grid, e(grid.centers), np.zeros(grid.num_cells, bool), e)
    return gagliardo_seminorm(u, params, exterior=True) ** params.p


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, default=24)
    args = ap.parse_args()
    print("p,s,lambda,dilated_grid_dev,independent_grid_dev")
    for p, s in ((2.0, 0.5), (1.5, 0.3), (3.0, 0.9)):
        P = KernelParams(s=s, p=p)
        base = seminorm_p(1.0, args.res, 0.5, P)
        for lam in (0.5, 2.0):
            want = lam ** (P.sp - P.Q) * base
            a = seminorm_p(1 / lam, args.res, 0.5 / lam, P) / want - 1
            b = seminorm_p(1 / lam, args.res - 1, 0.6 / lam, P) / want - 1
            print(f"{p},{s},{lam},{a:.3e},{b:.3e}")


if __name__ == "__main__":
    main()
