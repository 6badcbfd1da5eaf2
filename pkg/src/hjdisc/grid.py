"""Periodic grids on ``[0, 2*pi)`` and functions sampled on them."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .model import TWO_PI, wrap


@dataclass(frozen=True)
class PeriodicGrid:
    n: int
    dim: int = 1  # reserved for d-tori

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("a periodic grid needs at least 8 nodes")
        if self.dim != 1:
            raise NotImplementedError("only 1-D grids are supported")

    @property
    def dx(self) -> float:
        return TWO_PI / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.n) * self.dx
        x.setflags(write=False)
        return x


@dataclass(frozen=True, eq=False)
class GridFn:
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "GridFn":
        return cls(grid, np.broadcast_to(fn(grid.nodes), (grid.n,)))

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float) -> "GridFn":
        return cls(grid, np.full(grid.n, float(value)))

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def __neg__(self) -> "GridFn":
        return GridFn(self.grid, -self.values)

    def __add__(self, other) -> "GridFn":
        if isinstance(other, GridFn):
            _same_grid(self, other)
            return GridFn(self.grid, self.values + other.values)
        return GridFn(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other) -> "GridFn":
        if isinstance(other, GridFn):
            _same_grid(self, other)
            return GridFn(self.grid, self.values - other.values)
        return GridFn(self.grid, self.values - float(other))

    def __mul__(self, k: float) -> "GridFn":
        return GridFn(self.grid, self.values * float(k))

    __rmul__ = __mul__

    def __call__(self, x, order: str = "linear"):
        return interpolate(self, x, order)

    @cached_property
    def _cubic(self) -> CubicSpline:
        xs = np.append(self.grid.nodes, TWO_PI)
        return CubicSpline(xs, np.append(self.values, self.values[0]), bc_type="periodic")


def _same_grid(f: GridFn, g: GridFn) -> None:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: n={f.grid.n} vs n={g.grid.n}")


def interpolate(f: GridFn, x, order: str = "linear"):
    """Periodic interpolation of ``f``; exact at the nodes.

    ``order="linear"`` is monotone and is what the semigroup scheme uses;
    ``"cubic"`` is a periodic cubic spline meant for post-processing.
    """
    scalar = np.ndim(x) == 0
    xw = wrap(np.asarray(x, dtype=float))
    if order == "linear":
        n = f.grid.n
        s = xw / f.grid.dx
        # i*dx/dx can round just below i; snap so nodes are hit exactly
        r = np.rint(s)
        s = np.where(np.abs(s - r) < 1e-9, r, s)
        j = np.floor(s).astype(np.intp)
        w = s - j
        j %= n
        out = (1.0 - w) * f.values[j] + w * f.values[(j + 1) % n]
    elif order == "cubic":
        out = f._cubic(xw)
    else:
        raise ValueError(f"unknown interpolation order {order!r}")
    return float(out) if scalar else out


def gradient(f: GridFn) -> GridFn:
    """Centered periodic differences."""
    v = f.values
    return GridFn(f.grid, (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * f.grid.dx))


def second_difference(f: GridFn) -> GridFn:
    v = f.values
    return GridFn(f.grid, (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / f.grid.dx**2)


def sup_distance(f: GridFn, g: GridFn) -> float:
    _same_grid(f, g)
    return float(np.max(np.abs(f.values - g.values)))


def dist_torus(x, y):
    d = np.abs(wrap(np.asarray(x, float) - np.asarray(y, float)))
    return np.minimum(d, TWO_PI - d)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt(value: float) -> str:
    """17 significant digits: round-trips every double."""
    return format(float(value), ".17g")


def gridfn_to_csv(f: GridFn, path: str | os.PathLike | None = None, header: tuple[str, str] = ("x", "value")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for xi, vi in zip(f.grid.nodes, f.values):
        w.writerow((fmt(xi), fmt(vi)))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def gridfn_from_csv(source) -> GridFn:
    """Read a ``x,value`` CSV written by :func:`gridfn_to_csv` from a path or text stream."""
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    body = rows[1:]
    xs = np.array([float(r[0]) for r in body])
    vs = np.array([float(r[1]) for r in body])
    grid = PeriodicGrid(len(vs))
    if not np.allclose(xs, grid.nodes, rtol=0.0, atol=1e-12 * math.pi):
        raise ValueError("CSV abscissae are not a uniform periodic grid")
    return GridFn(grid, vs)
