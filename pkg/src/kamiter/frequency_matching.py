"""Frequency matching by degree-guided box subdivision.

Solves G(xi) = omega(xi) + drift(xi) - target = 0 without derivatives: a box
with nonzero Brouwer degree contains a root, and additivity of the degree
tells which half to keep.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .assumptions import FrequencyMap, degree_adaptive
from .errors import BoundaryTooClose, DegreeVanished, OutsideSearchBox

# split positions tried, in order, when a sub-box boundary passes too close to a root
_SPLITS = (0.5, 0.45, 0.55, 0.4, 0.6, 0.35, 0.65)


@dataclass(frozen=True)
class ParameterGrid:
    """Fixed tensor grid of g**n nodes on the box center +- radius."""

    center: np.ndarray
    radius: float
    g: int = 9
    current: np.ndarray | None = None
    per_node: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        object.__setattr__(self, "center", c)
        if self.g < 3 or self.g % 2 == 0:
            raise ValueError("grid size must be odd and >= 3")
        if not self.radius > 0:
            raise ValueError("grid radius must be positive")
        cur = c.copy() if self.current is None else np.asarray(self.current, dtype=float).reshape(-1)
        object.__setattr__(self, "current", cur)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def axes(self) -> list[np.ndarray]:
        return [c + self.radius * np.linspace(-1, 1, self.g) for c in self.center]

    @property
    def spacing(self) -> float:
        return 2 * self.radius / (self.g - 1)

    @property
    def box(self) -> list[tuple[float, float]]:
        return [(c - self.radius, c + self.radius) for c in self.center]

    @property
    def nodes(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.axes)))

    def nearest_node(self, xi) -> tuple[int, np.ndarray]:
        xi = np.asarray(xi, dtype=float)
        idx = np.clip(np.rint((xi - self.center) / self.spacing) + (self.g - 1) // 2, 0, self.g - 1)
        flat = int(np.ravel_multi_index(idx.astype(int), (self.g,) * self.dim))
        return flat, self.nodes[flat]

    def contains(self, xi) -> bool:
        xi = np.asarray(xi, dtype=float)
        return bool(np.all(np.abs(xi - self.center) <= self.radius))

    def interpolator(self, values: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Piecewise-linear interpolant of per-node vectors, shape (g**n, n)."""
        values = np.asarray(values, dtype=float).reshape((self.g,) * self.dim + (-1,))
        rgi = RegularGridInterpolator(self.axes, values, method="linear")

        def f(pts):
            pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
            # clip against round-off just outside the box
            lo = self.center - self.radius
            hi = self.center + self.radius
            return rgi(np.clip(pts, lo, hi))

        return f


@dataclass
class RootResult:
    xi: np.ndarray
    residual: float
    degree: int
    levels: int
    box: list = field(default_factory=list)


def _halves(box, axis, frac):
    a, b = box[axis]
    cut = a + frac * (b - a)
    lo, hi = list(box), list(box)
    lo[axis], hi[axis] = (a, cut), (cut, b)
    return lo, hi


def degree_root(G: Callable[[np.ndarray], np.ndarray], box: Sequence[tuple[float, float]], *,
                tol: float, atol: float = 0.0, max_samples: int = 1 << 17,
                deg: int | None = None) -> RootResult:
    """Root of a vectorized map G: (P, n) -> (P, n) inside a box of nonzero degree.

    Each level cuts one axis (widest first) and keeps a half of nonzero
    degree; the second half's degree follows from additivity.  When the cut
    passes too close to a root the other axes are tried before moving the
    cut.  Stops once the box diameter is below tol or |G(center)| <= atol.
    """
    box = [(float(a), float(b)) for a, b in box]
    n = len(box)
    outer = list(box)
    target = np.zeros(n)

    def degree(bx):
        return degree_adaptive(G, bx, target, vectorized=True, max_samples=max_samples)[0]

    if deg is None:
        deg = degree(box)
    if deg == 0:
        raise DegreeVanished("degree of G on the search box is 0: no certified root")
    width = max(b - a for a, b in box)
    # worst cut keeps 0.65 of an axis
    max_levels = n * (math.ceil(math.log(max(width / tol, 1.0)) / math.log(1 / max(_SPLITS))) + 2)
    levels = 0
    while True:
        center = np.array([(a + b) / 2 for a, b in box])
        gc = G(center[None, :])[0]
        diam = math.sqrt(sum((b - a) ** 2 for a, b in box))
        if diam < tol or float(np.linalg.norm(gc)) <= atol or levels >= max_levels:
            break
        axes = sorted(range(n), key=lambda i: -(box[i][1] - box[i][0]))
        chosen = None
        for frac in _SPLITS:
            for axis in axes:
                lo, hi = _halves(box, axis, frac)
                try:
                    d_lo = degree(lo)
                except BoundaryTooClose:
                    continue
                chosen = (lo, d_lo) if d_lo != 0 else (hi, deg - d_lo)
                break
            if chosen is not None:
                break
        if chosen is None:
            raise DegreeVanished(f"degree undetermined at level {levels}: root sits on every cut")
        box, deg = chosen
        if deg == 0:
            raise DegreeVanished(f"no half with nonzero degree at level {levels}")
        levels += 1
    for (a, b), (lo, hi) in zip(box, outer):
        if (a <= lo or b >= hi) and levels > 0 and diam < tol:
            raise OutsideSearchBox(f"root box {box} touches the search-box boundary")
    center = np.array([(a + b) / 2 for a, b in box])
    return RootResult(center, float(np.linalg.norm(G(center[None, :])[0])), deg, levels, box)


def solve_frequency_equation(fm: FrequencyMap, drift, target, grid: ParameterGrid,
                             tol: float = 1e-12, *, atol: float = 0.0) -> RootResult:
    """Solve omega(xi) + drift(xi) = target on the grid box.

    ``drift`` is either an array of per-node vectors (interpolated
    piecewise-linearly) or a vectorized callable.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if callable(drift):
        dfun = drift
    else:
        d = np.asarray(drift, dtype=float)
        if d.ndim == 1:
            dfun = lambda pts, d=d: np.broadcast_to(d, (np.atleast_2d(pts).shape[0], d.size))
        else:
            dfun = grid.interpolator(d)

    def G(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, fm.dim)
        return fm.many(pts) + dfun(pts) - target

    return degree_root(G, grid.box, tol=tol, atol=atol)


@dataclass(frozen=True)
class Advance:
    grid: ParameterGrid
    displacement: float
    snap_distance: float
    node: int


def advance_parameter(grid: ParameterGrid, xi_plus) -> Advance:
    """Move the current-parameter marker to xi_plus.

    The grid is fixed; the nearest node and the snap distance are reported.
    """
    xi_plus = np.asarray(xi_plus, dtype=float).reshape(-1)
    if not grid.contains(xi_plus):
        raise OutsideSearchBox(f"xi = {xi_plus} outside the grid box")
    idx, node = grid.nearest_node(xi_plus)
    disp = float(np.linalg.norm(xi_plus - grid.current))
    return Advance(replace(grid, current=xi_plus), disp, float(np.linalg.norm(node - xi_plus)), idx)
