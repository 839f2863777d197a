"""Truncated Fourier-Taylor series in action-angle variables.

A series is

    sum_{k, iota} c[k, iota] * y**iota * exp(1j * <k, x>)

with |k|_1 <= fourier_cutoff and |iota|_1 <= taylor_cutoff.  Storage is sparse
in the Fourier index and dense in the Taylor index: one row of monomial
coefficients per stored mode.  Monomials are ordered by total degree, so the
basis of a lower cutoff is a prefix of any higher one.

Norms are weighted l1 majorants,

    |f|_{s,r} = sum |c[k, iota]| s**|iota| exp(|k| r),

which bound the supremum of f on D(s, r) from above.
"""

from __future__ import annotations

import contextlib
import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch

_PRUNE = [1e-30]

# cap on (mode pairs x monomial pairs) held in memory at once during products
_CHUNK = 4_000_000


def prune_threshold() -> float:
    return _PRUNE[0]


def set_prune_threshold(value: float) -> None:
    if value < 0:
        raise ValueError("prune threshold must be nonnegative")
    _PRUNE[0] = float(value)


@contextlib.contextmanager
def pruning(value: float):
    old = _PRUNE[0]
    set_prune_threshold(value)
    try:
        yield
    finally:
        _PRUNE[0] = old


@dataclass(frozen=True)
class Domain:
    """Complex strip D(s, r): |y| < s, |Im x| < r."""

    s: float
    r: float

    def __post_init__(self):
        if not (0 < self.s <= 1 and 0 < self.r <= 1):
            raise ValueError(f"domain needs 0 < s, r <= 1, got s={self.s}, r={self.r}")


# ---------------------------------------------------------------------------
# monomial bookkeeping


class _Basis:
    def __init__(self, n: int, m: int):
        exps = []
        for d in range(m + 1):
            exps.extend(_exponents_of_degree(n, d))
        self.n = n
        self.m = m
        self.exps = np.array(exps, dtype=np.int64).reshape(len(exps), n)
        self.size = len(exps)
        self.degree = self.exps.sum(axis=1)
        self.index = {e: i for i, e in enumerate(exps)}
        self.deriv = []
        for i in range(n):
            src = np.nonzero(self.exps[:, i] > 0)[0]
            dst = np.array(
                [self.index[tuple(self.exps[j] - np.eye(n, dtype=np.int64)[i])] for j in src],
                dtype=np.int64,
            )
            self.deriv.append((src, dst, self.exps[src, i].astype(float)))


def _exponents_of_degree(n: int, d: int) -> list[tuple[int, ...]]:
    if n == 1:
        return [(d,)]
    out = []
    for first in range(d, -1, -1):
        for rest in _exponents_of_degree(n - 1, d - first):
            out.append((first,) + rest)
    return out


@lru_cache(maxsize=None)
def basis(n: int, m: int) -> _Basis:
    return _Basis(n, m)


@lru_cache(maxsize=None)
def _product_table(n: int, ma: int, mb: int, mout: int):
    ba, bb, bo = basis(n, ma), basis(n, mb), basis(n, mout)
    ta, tb, tc = [], [], []
    for i, ea in enumerate(ba.exps):
        da = ba.degree[i]
        if da > mout:
            break
        for j, eb in enumerate(bb.exps):
            if da + bb.degree[j] > mout:
                break
            ta.append(i)
            tb.append(j)
            tc.append(bo.index[tuple(ea + eb)])
    ta, tb, tc = (np.array(v, dtype=np.int64) for v in (ta, tb, tc))
    collect = np.zeros((len(tc), bo.size), dtype=complex)
    collect[np.arange(len(tc)), tc] = 1.0
    return ta, tb, collect


@lru_cache(maxsize=None)
def _l1_ball(n: int, K: int) -> np.ndarray:
    ks = [k for k in itertools.product(range(-K, K + 1), repeat=n) if sum(map(abs, k)) <= K]
    return np.array(ks, dtype=np.int64).reshape(len(ks), n)


# ---------------------------------------------------------------------------


class FourierTaylorSeries:
    """Immutable truncated Fourier-Taylor series.

    ``modes`` is an (M, n) integer array of Fourier indices in lexicographic
    order and ``coef`` an (M, N) complex array whose row i holds the Taylor
    coefficients of mode ``modes[i]`` in the graded monomial basis.
    """

    __slots__ = ("dim", "taylor_cutoff", "fourier_cutoff", "modes", "coef", "_lookup")

    def __init__(self, dim: int, taylor_cutoff: int, fourier_cutoff: int,
                 modes: np.ndarray | None = None, coef: np.ndarray | None = None,
                 *, _trusted: bool = False):
        if dim < 1 or taylor_cutoff < 0 or fourier_cutoff < 0:
            raise ValueError("dim >= 1 and nonnegative cutoffs required")
        self.dim = dim
        self.taylor_cutoff = taylor_cutoff
        self.fourier_cutoff = fourier_cutoff
        size = basis(dim, taylor_cutoff).size
        if modes is None:
            modes = np.zeros((0, dim), dtype=np.int64)
            coef = np.zeros((0, size), dtype=complex)
        if not _trusted:
            modes, coef = _canonical(np.asarray(modes, dtype=np.int64).reshape(-1, dim),
                                     np.asarray(coef, dtype=complex).reshape(-1, size),
                                     fourier_cutoff)
        modes.setflags(write=False)
        coef.setflags(write=False)
        self.modes = modes
        self.coef = coef
        self._lookup = None

    # -- construction -----------------------------------------------------

    @classmethod
    def zero(cls, dim: int, taylor_cutoff: int = 0, fourier_cutoff: int = 0):
        return cls(dim, taylor_cutoff, fourier_cutoff)

    @classmethod
    def from_terms(cls, dim: int, terms: Mapping[tuple, complex] | Iterable[tuple],
                   taylor_cutoff: int | None = None, fourier_cutoff: int | None = None):
        """Build from {(k, iota): c}; cutoffs default to the smallest that fit.

        Terms outside explicitly given cutoffs are dropped.
        """
        items = list(terms.items()) if isinstance(terms, Mapping) else list(terms)
        parsed = []
        for (k, iota), c in items:
            k, iota = tuple(int(v) for v in k), tuple(int(v) for v in iota)
            if len(k) != dim or len(iota) != dim:
                raise DimensionMismatch(f"term {(k, iota)} does not have dimension {dim}")
            if min(iota, default=0) < 0:
                raise ValueError(f"negative Taylor exponent in {iota}")
            parsed.append((k, iota, complex(c)))
        if taylor_cutoff is None:
            taylor_cutoff = max((sum(i) for _, i, _ in parsed), default=0)
        if fourier_cutoff is None:
            fourier_cutoff = max((sum(map(abs, k)) for k, _, _ in parsed), default=0)
        b = basis(dim, taylor_cutoff)
        rows: dict[tuple, np.ndarray] = {}
        for k, iota, c in parsed:
            if sum(iota) > taylor_cutoff or sum(map(abs, k)) > fourier_cutoff:
                continue
            row = rows.setdefault(k, np.zeros(b.size, dtype=complex))
            row[b.index[iota]] += c
        if not rows:
            return cls(dim, taylor_cutoff, fourier_cutoff)
        keys = sorted(rows)
        return cls(dim, taylor_cutoff, fourier_cutoff,
                   np.array(keys, dtype=np.int64), np.array([rows[k] for k in keys]))

    @classmethod
    def constant(cls, dim: int, value: complex, taylor_cutoff: int = 0, fourier_cutoff: int = 0):
        return cls.from_terms(dim, {((0,) * dim, (0,) * dim): value}, taylor_cutoff, fourier_cutoff)

    @classmethod
    def linear(cls, coeffs: Sequence[float], taylor_cutoff: int = 1, fourier_cutoff: int = 0):
        """<coeffs, y>"""
        n = len(coeffs)
        eye = np.eye(n, dtype=int)
        return cls.from_terms(n, {((0,) * n, tuple(eye[i])): c for i, c in enumerate(coeffs)},
                              taylor_cutoff, fourier_cutoff)

    @classmethod
    def y(cls, dim: int, i: int, taylor_cutoff: int = 1, fourier_cutoff: int = 0):
        iota = [0] * dim
        iota[i] = 1
        return cls.from_terms(dim, {((0,) * dim, tuple(iota)): 1.0}, taylor_cutoff, fourier_cutoff)

    @classmethod
    def exp_ikx(cls, k: Sequence[int], taylor_cutoff: int = 0, fourier_cutoff: int | None = None):
        n = len(k)
        return cls.from_terms(n, {(tuple(k), (0,) * n): 1.0}, taylor_cutoff, fourier_cutoff)

    @classmethod
    def cos_kx(cls, k: Sequence[int], taylor_cutoff: int = 0, fourier_cutoff: int | None = None):
        n = len(k)
        kk = tuple(k)
        return cls.from_terms(n, {(kk, (0,) * n): 0.5, (tuple(-v for v in kk), (0,) * n): 0.5},
                              taylor_cutoff, fourier_cutoff)

    # -- access ------------------------------------------------------------

    @property
    def basis(self) -> _Basis:
        return basis(self.dim, self.taylor_cutoff)

    def __len__(self) -> int:
        """Number of nonzero coefficients."""
        return int(np.count_nonzero(self.coef))

    @property
    def is_zero(self) -> bool:
        return self.modes.shape[0] == 0

    def _row_of(self, k) -> int | None:
        if self._lookup is None:
            self._lookup = {tuple(int(v) for v in kk): i for i, kk in enumerate(self.modes)}
        return self._lookup.get(tuple(int(v) for v in k))

    def block(self, k) -> np.ndarray:
        """Taylor coefficient row of mode k (zeros if absent)."""
        i = self._row_of(k)
        if i is None:
            return np.zeros(self.basis.size, dtype=complex)
        return self.coef[i]

    def coeff(self, k, iota) -> complex:
        iota = tuple(int(v) for v in iota)
        if sum(iota) > self.taylor_cutoff:
            return 0j
        i = self._row_of(k)
        if i is None:
            return 0j
        return complex(self.coef[i, self.basis.index[iota]])

    def terms(self) -> Iterator[tuple[tuple[int, ...], tuple[int, ...], complex]]:
        """Nonzero terms, sorted lexicographically by (k, iota)."""
        exps = [tuple(int(v) for v in e) for e in self.basis.exps]
        out = []
        for i, k in enumerate(self.modes):
            kk = tuple(int(v) for v in k)
            for j in np.nonzero(self.coef[i])[0]:
                out.append((kk, exps[j], complex(self.coef[i, j])))
        out.sort(key=lambda t: (t[0], t[1]))
        return iter(out)

    def __repr__(self) -> str:
        return (f"FourierTaylorSeries(dim={self.dim}, taylor_cutoff={self.taylor_cutoff}, "
                f"fourier_cutoff={self.fourier_cutoff}, terms={len(self)})")

    # -- cutoff management -----------------------------------------------

    def with_cutoffs(self, taylor_cutoff: int | None = None,
                     fourier_cutoff: int | None = None) -> "FourierTaylorSeries":
        """Re-embed with new cutoffs; lowering a cutoff truncates."""
        M = self.taylor_cutoff if taylor_cutoff is None else taylor_cutoff
        K = self.fourier_cutoff if fourier_cutoff is None else fourier_cutoff
        if M == self.taylor_cutoff and K == self.fourier_cutoff:
            return self
        coef = _resize_rows(self.coef, self.dim, self.taylor_cutoff, M)
        modes = self.modes
        if K < self.fourier_cutoff:
            keep = np.abs(modes).sum(axis=1) <= K
            modes, coef = modes[keep], coef[keep]
        return FourierTaylorSeries(self.dim, M, K, modes.copy(), coef)

    # -- linear operations -----------------------------------------------

    def __add__(self, other):
        if not isinstance(other, FourierTaylorSeries):
            other = FourierTaylorSeries.constant(self.dim, other)
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), -self.coef, _trusted=True)

    def __sub__(self, other):
        if not isinstance(other, FourierTaylorSeries):
            other = FourierTaylorSeries.constant(self.dim, other)
        return add(self, -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FourierTaylorSeries):
            return mul(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __truediv__(self, other):
        return self.scale(1.0 / other)

    def scale(self, c: complex) -> "FourierTaylorSeries":
        if c == 0:
            return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), self.coef * c)

    def conj_reflect(self) -> "FourierTaylorSeries":
        """The series conj(c[-k, iota]); equal to self iff self is real-valued."""
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   -self.modes, np.conj(self.coef))

    def is_real(self, atol: float = 0.0) -> bool:
        diff = add(self, -self.conj_reflect(), prune=False)
        return bool(diff.is_zero or np.max(np.abs(diff.coef)) <= atol)

    def realify(self) -> "FourierTaylorSeries":
        """Project onto real-valued series: (c[k] + conj c[-k]) / 2."""
        return add(self, self.conj_reflect()).scale(0.5)

    def equals(self, other: "FourierTaylorSeries") -> bool:
        """Exact coefficientwise equality (cutoffs ignored)."""
        d = add(self, -other, prune=False)
        return bool(d.is_zero or not np.any(d.coef))

    def max_abs_diff(self, other: "FourierTaylorSeries") -> float:
        d = add(self, -other, prune=False)
        return 0.0 if d.is_zero else float(np.max(np.abs(d.coef)))

    # -- calculus ----------------------------------------------------------

    def d_y(self, i: int) -> "FourierTaylorSeries":
        src, dst, fac = self.basis.deriv[i]
        coef = np.zeros_like(self.coef)
        coef[:, dst] = self.coef[:, src] * fac
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), coef)

    def d_x(self, i: int) -> "FourierTaylorSeries":
        factor = 1j * self.modes[:, i].astype(float)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), self.coef * factor[:, None])

    def partial(self, variable: str) -> "FourierTaylorSeries":
        """Derivative by name: 'y1'..'yn' or 'x1'..'xn' (1-based)."""
        kind, idx = variable[0], int(variable[1:]) - 1
        if not 0 <= idx < self.dim or kind not in "xy":
            raise ValueError(f"unknown variable {variable!r}")
        return self.d_y(idx) if kind == "y" else self.d_x(idx)

    def angle_average(self) -> "FourierTaylorSeries":
        keep = ~np.any(self.modes != 0, axis=1)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes[keep].copy(), self.coef[keep].copy(), _trusted=True)

    def oscillating_part(self) -> "FourierTaylorSeries":
        """Everything but the k = 0 modes."""
        keep = np.any(self.modes != 0, axis=1)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes[keep].copy(), self.coef[keep].copy(), _trusted=True)

    def restrict_degree(self, lo: int = 0, hi: int | None = None) -> "FourierTaylorSeries":
        """Keep Taylor degrees lo <= |iota| <= hi."""
        hi = self.taylor_cutoff if hi is None else hi
        deg = self.basis.degree
        mask = (deg >= lo) & (deg <= hi)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), self.coef * mask)

    def shift_y(self, a: Sequence[float]) -> "FourierTaylorSeries":
        """Re-expand about y + a: returns g with g(y, x) = f(y + a, x).

        Exact for polynomials; no Taylor degree is created or lost.
        """
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dim,):
            raise DimensionMismatch(f"shift of shape {a.shape} for dim {self.dim}")
        if not np.any(a) or self.is_zero:
            return self
        S = _shift_matrix(self.basis, a)
        return FourierTaylorSeries(self.dim, self.taylor_cutoff, self.fourier_cutoff,
                                   self.modes.copy(), self.coef @ S)

    # -- evaluation & norms ----------------------------------------------

    def evaluate(self, y, x) -> complex:
        """Direct summation at one point; (y, x) should lie in the intended domain."""
        y = np.asarray(y, dtype=complex)
        x = np.asarray(x, dtype=complex)
        if self.is_zero:
            return 0j
        mono = _monomials(self.basis, y)
        phase = np.exp(1j * (self.modes @ x))
        return complex(phase @ (self.coef @ mono))

    def evaluate_many(self, y, x=None) -> np.ndarray:
        """Vectorized evaluate over (P, n) arrays of points; x defaults to 0."""
        y = np.asarray(y, dtype=complex).reshape(-1, self.dim)
        if self.is_zero:
            return np.zeros(y.shape[0], dtype=complex)
        mono = np.prod(y[:, None, :] ** self.basis.exps[None, :, :], axis=2)
        if x is None:
            phase = np.ones((y.shape[0], self.modes.shape[0]), dtype=complex)
        else:
            x = np.asarray(x, dtype=complex).reshape(-1, self.dim)
            phase = np.exp(1j * (x @ self.modes.T))
        return np.einsum("pm,mj,pj->p", phase, self.coef, mono)

    def weighted_norm(self, d: Domain | tuple[float, float]) -> float:
        s, r = (d.s, d.r) if isinstance(d, Domain) else d
        if self.is_zero:
            return 0.0
        ws = float(s) ** self.basis.degree
        wk = np.exp(np.abs(self.modes).sum(axis=1) * float(r))
        return float(wk @ (np.abs(self.coef) @ ws))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "taylor_cutoff": self.taylor_cutoff,
            "fourier_cutoff": self.fourier_cutoff,
            "terms": [{"k": list(k), "iota": list(i), "re": c.real, "im": c.imag}
                      for k, i, c in self.terms()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping) -> "FourierTaylorSeries":
        terms = {}
        for t in data["terms"]:
            key = (tuple(t["k"]), tuple(t["iota"]))
            terms[key] = terms.get(key, 0) + complex(t["re"], t["im"])
        return cls.from_terms(int(data["dim"]), terms, int(data["taylor_cutoff"]),
                              int(data["fourier_cutoff"]))

    @classmethod
    def from_json(cls, text: str) -> "FourierTaylorSeries":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# helpers


def _unique_rows(modes):
    """np.unique(modes, axis=0, return_inverse=True) via one int64 key per row.

    The key is the row read as digits in base 2 max|k| + 1, so sorting keys
    sorts rows lexicographically.
    """
    n = modes.shape[1]
    K = int(np.abs(modes).max()) if modes.size else 0
    base = 2 * K + 1
    if n * math.log2(base) >= 62:
        uniq, inv = np.unique(modes, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1)
    key = np.zeros(modes.shape[0], dtype=np.int64)
    for i in range(n):
        key = key * base + (modes[:, i] + K)
    if np.all(key[1:] > key[:-1]):
        return modes, np.arange(key.size)
    _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    return modes[first], inv.reshape(-1)


def _canonical(modes, coef, K):
    """Sort modes, merge duplicates, drop out-of-range modes, prune."""
    if modes.shape[0]:
        keep = np.abs(modes).sum(axis=1) <= K
        modes, coef = modes[keep], coef[keep]
    if modes.shape[0] == 0:
        return modes.copy(), coef.copy()
    uniq, inv = _unique_rows(modes)
    if uniq.shape[0] != modes.shape[0]:
        merged = np.zeros((uniq.shape[0], coef.shape[1]), dtype=complex)
        np.add.at(merged, inv, coef)
        coef = merged
    else:
        order = np.empty_like(inv)
        order[inv] = np.arange(inv.size)
        coef = coef[order]
    return _prune_rows(uniq, coef)


def _prune_rows(modes, coef):
    thr = _PRUNE[0]
    coef = np.where(np.abs(coef) < thr, 0, coef) if thr > 0 else coef.copy()
    alive = np.any(coef != 0, axis=1)
    return np.ascontiguousarray(modes[alive]), np.ascontiguousarray(coef[alive])


def _resize_rows(coef, n, m_from, m_to):
    if m_from == m_to:
        return coef
    size = basis(n, m_to).size
    if m_to < m_from:
        return coef[:, :size].copy()
    out = np.zeros((coef.shape[0], size), dtype=complex)
    out[:, : coef.shape[1]] = coef
    return out


def _check_dims(a: FourierTaylorSeries, b: FourierTaylorSeries):
    if a.dim != b.dim:
        raise DimensionMismatch(f"series dimensions differ: {a.dim} vs {b.dim}")


def _monomials(b: _Basis, y: np.ndarray) -> np.ndarray:
    return np.prod(y[None, :] ** b.exps, axis=1)


def _shift_matrix(b: _Basis, a: np.ndarray) -> np.ndarray:
    # S[iota, j] = prod_i C(iota_i, j_i) a_i**(iota_i - j_i) for j <= iota
    S = np.zeros((b.size, b.size))
    for p, ep in enumerate(b.exps):
        for q in range(p + 1):
            eq = b.exps[q]
            if np.any(eq > ep):
                continue
            v = 1.0
            for i in range(b.n):
                v *= math.comb(int(ep[i]), int(eq[i])) * a[i] ** int(ep[i] - eq[i])
            S[p, q] = v
    return S


def add(a: FourierTaylorSeries, b: FourierTaylorSeries, *, prune: bool = True) -> FourierTaylorSeries:
    """Coefficientwise sum; cutoffs are the maxima of the inputs'."""
    _check_dims(a, b)
    M = max(a.taylor_cutoff, b.taylor_cutoff)
    K = max(a.fourier_cutoff, b.fourier_cutoff)
    ca = _resize_rows(a.coef, a.dim, a.taylor_cutoff, M)
    cb = _resize_rows(b.coef, b.dim, b.taylor_cutoff, M)
    modes = np.concatenate([a.modes, b.modes])
    coef = np.concatenate([ca, cb])
    if not prune:
        with pruning(0.0):
            return FourierTaylorSeries(a.dim, M, K, modes, coef)
    return FourierTaylorSeries(a.dim, M, K, modes, coef)


def mul(a: FourierTaylorSeries, b: FourierTaylorSeries,
        taylor_cutoff: int | None = None, fourier_cutoff: int | None = None) -> FourierTaylorSeries:
    """Truncated Cauchy product.

    Result cutoffs default to the larger of the inputs'.
    """
    _check_dims(a, b)
    M = max(a.taylor_cutoff, b.taylor_cutoff) if taylor_cutoff is None else taylor_cutoff
    K = max(a.fourier_cutoff, b.fourier_cutoff) if fourier_cutoff is None else fourier_cutoff
    n = a.dim
    if a.is_zero or b.is_zero:
        return FourierTaylorSeries(n, M, K)
    ta, tb, collect = _product_table(n, a.taylor_cutoff, b.taylor_cutoff, M)
    if ta.size == 0:
        return FourierTaylorSeries(n, M, K)

    ksum = a.modes[:, None, :] + b.modes[None, :, :]
    ii, jj = np.nonzero(np.abs(ksum).sum(axis=2) <= K)
    if ii.size == 0:
        return FourierTaylorSeries(n, M, K)
    targets, inv = _unique_rows(ksum[ii, jj])
    out = np.zeros((targets.shape[0], collect.shape[1]), dtype=complex)
    A = a.coef[:, ta]
    B = b.coef[:, tb]
    step = max(1, _CHUNK // ta.size)
    for lo in range(0, ii.size, step):
        sl = slice(lo, lo + step)
        rows = (A[ii[sl]] * B[jj[sl]]) @ collect
        if rows.shape[0] < 256:
            np.add.at(out, inv[sl], rows)
            continue
        scatter = sparse.csr_matrix(
            (np.ones(rows.shape[0]), (inv[sl], np.arange(rows.shape[0]))),
            shape=(targets.shape[0], rows.shape[0]),
        )
        out += scatter @ rows
    return FourierTaylorSeries(n, M, K, targets, out)


def partial_derivative(a: FourierTaylorSeries, variable: str) -> FourierTaylorSeries:
    return a.partial(variable)


def poisson_bracket(f: FourierTaylorSeries, g: FourierTaylorSeries,
                    taylor_cutoff: int | None = None,
                    fourier_cutoff: int | None = None) -> FourierTaylorSeries:
    """{f, g} = <d_x f, d_y g> - <d_y f, d_x g>.

    Under this convention d/dt (G o phi_F^t) = {G, F} o phi_F^t for the flow
    ydot = -d_x F, xdot = d_y F.
    """
    _check_dims(f, g)
    M = max(f.taylor_cutoff, g.taylor_cutoff) if taylor_cutoff is None else taylor_cutoff
    K = max(f.fourier_cutoff, g.fourier_cutoff) if fourier_cutoff is None else fourier_cutoff
    out = FourierTaylorSeries(f.dim, M, K)
    for i in range(f.dim):
        out = add(out, mul(f.d_x(i), g.d_y(i), M, K), prune=False)
        out = add(out, -mul(f.d_y(i), g.d_x(i), M, K), prune=False)
    return FourierTaylorSeries(f.dim, M, K, out.modes.copy(), out.coef)


def angle_average(a: FourierTaylorSeries) -> FourierTaylorSeries:
    return a.angle_average()


def weighted_norm(a: FourierTaylorSeries, d: Domain | tuple[float, float]) -> float:
    return a.weighted_norm(d)


def evaluate(a: FourierTaylorSeries, y, x) -> complex:
    return a.evaluate(y, x)


def holder_seminorm(family: Sequence[tuple[Sequence[float], FourierTaylorSeries]],
                    beta: float, d: Domain | tuple[float, float]) -> float:
    """Sampled C^beta seminorm: max over sample pairs of |P(xi) - P(zeta)| / |xi - zeta|**beta.

    A lower bound for the seminorm over the continuum; the norm inside is the
    weighted majorant on ``d``.
    """
    if len(family) < 2:
        raise ValueError("holder_seminorm needs at least two samples")
    pts = [np.atleast_1d(np.asarray(xi, dtype=float)) for xi, _ in family]
    best = 0.0
    for (i, (_, fi)), (j, (_, fj)) in itertools.combinations(enumerate(family), 2):
        dist = float(np.linalg.norm(pts[i] - pts[j]))
        if dist == 0:
            raise ValueError("holder_seminorm needs distinct parameter samples")
        best = max(best, (fi - fj).weighted_norm(d) / dist**beta)
    return best


def l1_ball(n: int, K: int) -> np.ndarray:
    """All integer vectors with |k|_1 <= K, lexicographic order."""
    return _l1_ball(n, K)
