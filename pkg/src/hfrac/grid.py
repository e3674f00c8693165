"""Uniform cell-centred box grids over a window of R^{2n+1}.

Cells are enumerated in row-major order over the multi-index
``(i_0, ..., i_{2n})`` with the last axis (``t``) fastest::

    flat = ((i_0 * r_1 + i_1) * r_2 + ...) * r_{2n} + i_{2n}
    center_k = lower_k + (i_k + 1/2) * (upper_k - lower_k) / r_k
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, ResourceError
from .expr import Expr
from .hgroup import GAUGE, Ball, GroupPoint, pseudo_distance

DEFAULT_MAX_CELLS = 32768


def max_cells() -> int:
    env = os.environ.get("HFRAC_MAX_CELLS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"HFRAC_MAX_CELLS must be an integer, got {env!r}") from None
    return DEFAULT_MAX_CELLS


@dataclass(frozen=True)
class GridSpec:
    n: int
    lower: tuple
    upper: tuple
    resolution: tuple
    max_cells: int | None = None

    def __post_init__(self):
        d = 2 * self.n + 1
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        res = self.resolution
        if isinstance(res, (int, np.integer)):
            res = (int(res),) * d
        res = tuple(int(r) for r in res)
        if self.n < 1 or len(lower) != d or len(upper) != d or len(res) != d:
            raise InputError(f"grid corners/resolution must have length 2n+1 = {d}")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise InputError("upper corner must exceed lower corner componentwise")
        if any(r < 1 for r in res):
            raise InputError("resolution must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", res)

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def num_cells(self) -> int:
        return math.prod(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.resolution)

    @classmethod
    def around_ball(cls, center, radius: float, resolution, n: int = 1, collar: float | None = None,
                    t_resolution: int | None = None):
        """Box containing the gauge ball B_{radius+collar}(center).

        ``collar`` defaults to the diameter of the ball.  The bounding box uses
        the exact extent of a translated gauge ball in the t direction.
        """
        c = np.asarray(center.coords if isinstance(center, GroupPoint) else center, dtype=float)
        if c.size != 2 * n + 1:
            raise InputError("center has the wrong dimension")
        if collar is None:
            collar = 2.0 * radius
        rho = radius + collar
        zc = np.abs(c[:-1])
        # |t - t_c| <= rho^2 + 2 rho |J z_c| for points of B_rho(c)
        t_ext = rho ** 2 + 2.0 * rho * float(np.sqrt(np.sum(zc ** 2)))
        half = np.concatenate([np.full(2 * n, rho), [t_ext]])
        res = [int(resolution)] * (2 * n) + [int(t_resolution or resolution)]
        return cls(n, tuple(c - half), tuple(c + half), tuple(res))


@dataclass(frozen=True, eq=False)
class Grid:
    spec: GridSpec
    centers: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def num_cells(self) -> int:
        return self.centers.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return self.spec.spacing

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.spec.lower)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.spec.upper)

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.spec.resolution))

    def center_of(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=float)
        return self.lower + (multi + 0.5) * self.spacing

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)


def build_grid(spec: GridSpec) -> Grid:
    cap = spec.max_cells if spec.max_cells is not None else max_cells()
    if spec.num_cells > cap:
        raise ResourceError(f"grid has {spec.num_cells} cells, over the cap of {cap} "
                            "(set HFRAC_MAX_CELLS to raise it)")
    axes = [np.arange(r) for r in spec.resolution]
    index = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    centers = np.array(spec.lower) + (index + 0.5) * spec.spacing
    index.setflags(write=False)
    centers.setflags(write=False)
    return Grid(spec, centers, index)


def ball_mask(grid: Grid, ball: Ball) -> np.ndarray:
    """Cells whose centre lies in the open gauge ball."""
    c = ball.center.coords if isinstance(ball.center, GroupPoint) else np.asarray(ball.center, float)
    return pseudo_distance(grid.centers, c, GAUGE) < ball.radius


def integrate(grid: Grid, values, mask=None) -> float:
    """Midpoint rule: sum of values times cell volume over masked cells."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.num_cells,):
        raise InputError(f"expected {grid.num_cells} values, got shape {values.shape}")
    if mask is None:
        return float(np.sum(values) * grid.cell_volume)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise InputError("mask length does not match values")
    return float(np.sum(values[mask]) * grid.cell_volume)


def boundary_margin_ok(grid: Grid, mask) -> bool:
    """True iff no masked cell touches the outermost layer of the box."""
    idx = grid.index[np.asarray(mask, dtype=bool)]
    res = np.array(grid.spec.resolution)
    return bool(np.all(idx >= 1) and np.all(idx <= res - 2))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell samples of u on the box, the Omega mask, and the datum g outside the box."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    omega_mask: np.ndarray = field(repr=False)
    exterior: Expr | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        m = np.array(self.omega_mask, dtype=bool)
        if v.shape != (self.grid.num_cells,) or m.shape != v.shape:
            raise InputError("values/omega_mask must have one entry per cell")
        if not np.all(np.isfinite(v)):
            raise InputError("grid function values must be finite")
        if m.any() and not boundary_margin_ok(self.grid, m):
            raise InputError("Omega cells must keep at least one cell of margin inside the box")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "omega_mask", m)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.omega_mask, self.exterior)

    def exterior_values(self, pts) -> np.ndarray:
        return evaluate_exterior(self, pts)


def evaluate_exterior(gfun: GridFunction, pts) -> np.ndarray:
    if gfun.exterior is None:
        raise InputError("grid function has no exterior datum")
    return gfun.exterior(pts)


# CSV serialisation --------------------------------------------------------


def _csv_header(n: int) -> list[str]:
    if n == 1:
        return ["i", "j", "k", "x", "y", "t", "value", "in_omega"]
    idx = [f"i{a}" for a in range(2 * n + 1)]
    coords = [f"x{j}" for j in range(1, n + 1)] + [f"y{j}" for j in range(1, n + 1)] + ["t"]
    return idx + coords + ["value", "in_omega"]


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def grid_function_to_csv(gfun: GridFunction) -> str:
    """CSV text: one row per cell in row-major order, 17 significant digits, LF endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_csv_header(gfun.grid.n))
    for idx, c, v, m in zip(gfun.grid.index, gfun.grid.centers, gfun.values, gfun.omega_mask):
        w.writerow([*map(int, idx), *map(_g17, c), _g17(v), int(bool(m))])
    return buf.getvalue()


def grid_function_from_csv(text: str, spec: GridSpec, exterior: Expr | None = None) -> GridFunction:
    grid = build_grid(spec)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != _csv_header(spec.n):
        raise InputError("unexpected CSV header")
    body = rows[1:]
    if len(body) != grid.num_cells:
        raise InputError(f"CSV has {len(body)} rows, grid has {grid.num_cells} cells")
    d = spec.dim
    values = np.empty(grid.num_cells)
    mask = np.zeros(grid.num_cells, dtype=bool)
    for row in body:
        flat = grid.flat_index([int(v) for v in row[:d]])
        values[flat] = float(row[2 * d])
        mask[flat] = row[2 * d + 1] == "1"
    return GridFunction(grid, values, mask, exterior)


def sample(grid: Grid, field_fn) -> np.ndarray:
    """Evaluate a callable / Expr at all cell centres."""
    return np.asarray(field_fn(grid.centers), dtype=float)


def subcell_offsets(spacing: Sequence[float], level: int) -> np.ndarray:
    """Offsets of the 2^(level*d) sub-cell midpoints relative to the cell centre."""
    d = len(spacing)
    m = 2 ** level
    ticks = (np.arange(m) + 0.5) / m - 0.5
    mesh = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return mesh * np.asarray(spacing, dtype=float)
