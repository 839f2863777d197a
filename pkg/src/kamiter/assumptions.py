"""Numerical checks of the standing assumptions on the frequency map.

* Diophantine margin of a frequency vector over a finite Fourier range.
* Brouwer degree of a continuous map on a box (n = 1 by endpoint signs,
  n = 2 by the winding number of the sampled boundary loop).
* Fitting of the weak-convexity constants (sigma, L) from samples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoundaryTooClose, UnsupportedDimension
from .series import l1_ball

Box = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class DiophantineParams:
    gamma: float
    tau: float

    def validate(self, n: int) -> None:
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tau > n - 1:
            raise ValueError(f"tau must exceed n - 1 = {n - 1}")


@dataclass(frozen=True)
class FrequencyMap:
    """Continuous map xi -> omega(xi) on a closed box.

    ``eval`` takes one point; ``eval_many`` (optional) takes an (N, n) array.
    """

    dim: int
    domain_box: tuple[tuple[float, float], ...]
    eval: Callable[[np.ndarray], np.ndarray]
    holder_index: float = 0.5
    convexity: tuple[float, float] | None = None
    eval_many: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.domain_box) != self.dim:
            raise ValueError("domain box dimension mismatch")
        if not 0 < self.holder_index < 1:
            raise ValueError("Hoelder index must lie in (0, 1)")
        if self.convexity is not None:
            sigma, L = self.convexity
            if not (sigma > 0 and 0 < L <= self.holder_index):
                raise ValueError("convexity needs sigma > 0 and 0 < L <= holder index")

    def __call__(self, xi) -> np.ndarray:
        return np.asarray(self.eval(np.asarray(xi, dtype=float)), dtype=float).reshape(self.dim)

    def many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        if self.eval_many is not None:
            return np.asarray(self.eval_many(pts), dtype=float).reshape(-1, self.dim)
        return np.array([self(p) for p in pts]).reshape(-1, self.dim)


# ---------------------------------------------------------------------------
# Diophantine condition


def check_diophantine(omega: Sequence[float], dp: DiophantineParams, K: int):
    """Finite-K Diophantine scan.

    Returns (ok, margin, worst_k) with margin = min |<k, omega>| |k|_1**tau over
    0 < |k|_1 <= K.  Only one of k, -k is scanned (first nonzero entry
    positive); ties go to the lexicographically smallest k.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    omega = np.asarray(omega, dtype=float)
    ks = half_lattice(omega.size, K)
    norms = np.abs(ks).sum(axis=1).astype(float)
    vals = np.abs(ks @ omega) * norms**dp.tau
    i = int(np.argmin(vals))
    margin = float(vals[i])
    return margin > dp.gamma, margin, tuple(int(v) for v in ks[i])


def half_lattice(n: int, K: int) -> np.ndarray:
    ks = l1_ball(n, K)
    nz = ks != 0
    first = np.argmax(nz, axis=1)
    lead = ks[np.arange(ks.shape[0]), first]
    return ks[lead > 0]


def diophantine_gamma(omega: Sequence[float], tau: float, K: int = 200) -> float:
    """Half the brute-force margin: a usable gamma for omega at cutoff K."""
    _, margin, _ = check_diophantine(omega, DiophantineParams(1.0, tau), K)
    return margin / 2


# ---------------------------------------------------------------------------
# Brouwer degree


def _eval_points(f, pts: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        return np.asarray(f(pts), dtype=float).reshape(pts.shape)
    return np.array([np.asarray(f(p), dtype=float).reshape(-1) for p in pts]).reshape(pts.shape)


def box_boundary(box: Box, samples_per_edge: int) -> np.ndarray:
    """Counterclockwise boundary samples of a 2-D box, not closed."""
    (a1, b1), (a2, b2) = box
    t = np.arange(samples_per_edge) / samples_per_edge
    bottom = np.column_stack([a1 + (b1 - a1) * t, np.full_like(t, a2)])
    right = np.column_stack([np.full_like(t, b1), a2 + (b2 - a2) * t])
    top = np.column_stack([b1 - (b1 - a1) * t, np.full_like(t, b2)])
    left = np.column_stack([np.full_like(t, a1), b2 - (b2 - a2) * t])
    return np.concatenate([bottom, right, top, left])


def brouwer_degree(f: Callable, box: Box, p: Sequence[float], samples_per_edge: int = 64,
                   *, margin_factor: float = 10.0, vectorized: bool = False):
    """Degree of f on an open box with respect to the target p.

    Returns (deg, boundary_margin).  For n = 2 every pair of adjacent boundary
    samples must sit farther from p than ``margin_factor`` times the jump
    between them, so every angle increment is unambiguous.
    """
    box = [tuple(map(float, iv)) for iv in box]
    n = len(box)
    p = np.asarray(p, dtype=float).reshape(-1)
    if n == 1:
        (a, b), = box
        va = _eval_points(f, np.array([[a]]), vectorized)[0, 0] - p[0]
        vb = _eval_points(f, np.array([[b]]), vectorized)[0, 0] - p[0]
        margin = min(abs(va), abs(vb))
        if margin == 0:
            raise BoundaryTooClose("target lies on f(boundary)")
        return int((np.sign(vb) - np.sign(va)) // 2), float(margin)
    if n != 2:
        raise UnsupportedDimension(f"degree implemented for n <= 2, got n = {n}")
    pts = box_boundary(box, samples_per_edge)
    v = _eval_points(f, pts, vectorized) - p
    dist = np.hypot(v[:, 0], v[:, 1])
    margin = float(np.min(dist))
    w = np.roll(v, -1, axis=0)
    jump = np.hypot(*(w - v).T)
    near = np.minimum(dist, np.roll(dist, -1))
    bad = ~(near > margin_factor * jump)
    if bad.any():
        i = int(np.argmax(bad))
        err = BoundaryTooClose(
            f"boundary distance {near[i]:.3e} not above {margin_factor} x sample jump {jump[i]:.3e}")
        with np.errstate(divide="ignore", invalid="ignore"):
            err.ratio = float(np.nanmin(np.where(jump > 0, near / jump, np.inf)))
        raise err
    cross = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    dot = np.einsum("ij,ij->i", v, w)
    total = float(np.sum(np.arctan2(cross, dot)))
    return int(round(total / (2 * math.pi))), margin


def degree_adaptive(f: Callable, box: Box, p: Sequence[float], *, start: int = 16,
                    max_samples: int = 1 << 15, margin_factor: float = 10.0,
                    vectorized: bool = False):
    """brouwer_degree with boundary sampling doubled until the margin test passes.

    Gives up early when even max_samples cannot pass: for a Lipschitz map the
    distance/jump ratio grows linearly in the sample count.
    """
    if len(box) == 1:
        return brouwer_degree(f, box, p, vectorized=vectorized)
    n = start
    while True:
        try:
            return brouwer_degree(f, box, p, n, margin_factor=margin_factor,
                                  vectorized=vectorized)
        except BoundaryTooClose as exc:
            if n >= max_samples or exc.ratio * (max_samples / n) < margin_factor / 4:
                raise
            n *= 2


# ---------------------------------------------------------------------------
# weak convexity


@dataclass
class ConvexityFit:
    sigma: float
    L: int
    violated: bool
    witness: tuple | None = None
    quotients: dict[int, float] = field(default_factory=dict)


def fit_weak_convexity(fm: Callable, samples: Sequence, L_max: int = 8, rtol: float = 1e-12):
    """Fit |omega(xi) - omega(xi*)| >= sigma |xi - xi*|**L on sample pairs.

    If two distinct samples share omega exactly, weak convexity fails and the pair
    is returned as witness.  Otherwise, for L = 1..L_max the min-pair quotient
    q_L is computed; L is the largest grid value attaining max q_L (within
    rtol) and sigma = that maximum.
    """
    pts = [np.atleast_1d(np.asarray(s, dtype=float)) for s in samples]
    if len(pts) < 2:
        raise ValueError("need at least two samples")
    vals = [np.atleast_1d(np.asarray(fm(s), dtype=float)) for s in pts]
    pairs = []
    for i, j in itertools.combinations(range(len(pts)), 2):
        dxi = float(np.linalg.norm(pts[i] - pts[j]))
        if dxi == 0:
            raise ValueError("samples must be distinct")
        if np.array_equal(vals[i], vals[j]):
            return ConvexityFit(0.0, 0, True, (tuple(pts[i]), tuple(pts[j])))
        pairs.append((float(np.linalg.norm(vals[i] - vals[j])), dxi))
    dw = np.array([a for a, _ in pairs])
    dx = np.array([b for _, b in pairs])
    q = {L: float(np.min(dw / dx**L)) for L in range(1, L_max + 1)}
    best = max(q.values())
    L_hat = max(L for L, v in q.items() if v >= best * (1 - rtol))
    return ConvexityFit(q[L_hat], L_hat, False, None, q)
