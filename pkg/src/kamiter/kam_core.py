"""One KAM cycle at a fixed parameter value.

truncate -> solve_homological -> lie_compose -> extract_normal_form, plus the
action-translation variant used when the frequency is tuned through the
action variable instead of an external parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assumptions import DiophantineParams
from .errors import (DimensionMismatch, LieSeriesStalled, SafetyMarginBreach,
                     ShiftTooLarge, SmallDivisorBreach)
from .series import FourierTaylorSeries, _product_table, basis, poisson_bracket


@dataclass(frozen=True)
class NormalForm:
    """e + <omega0 + drift, y> + hbar(y)."""

    e: float
    omega0: np.ndarray
    hbar: FourierTaylorSeries
    drift: np.ndarray

    def __post_init__(self):
        omega0 = np.asarray(self.omega0, dtype=float).reshape(-1)
        drift = np.asarray(self.drift, dtype=float).reshape(-1)
        n = self.hbar.dim
        if omega0.size != n or drift.size != n:
            raise DimensionMismatch("omega0, drift and hbar must share the dimension")
        if np.any(self.hbar.modes != 0):
            raise ValueError("hbar must not depend on the angles")
        if not self.hbar.restrict_degree(0, 1).is_zero:
            raise ValueError("hbar must have no constant or linear part")
        if not np.all(np.isfinite(drift)):
            raise ValueError("drift must be finite")
        object.__setattr__(self, "omega0", omega0)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "e", float(self.e))

    @classmethod
    def unperturbed(cls, omega0, hbar: FourierTaylorSeries | None = None, e: float = 0.0):
        omega0 = np.asarray(omega0, dtype=float).reshape(-1)
        if hbar is None:
            hbar = FourierTaylorSeries.zero(omega0.size, 2)
        return cls(e, omega0, hbar, np.zeros_like(omega0))

    @property
    def dim(self) -> int:
        return self.hbar.dim

    @property
    def frequency(self) -> np.ndarray:
        return self.omega0 + self.drift

    def as_series(self, taylor_cutoff: int | None = None, fourier_cutoff: int = 0):
        M = max(self.hbar.taylor_cutoff, 1) if taylor_cutoff is None else taylor_cutoff
        n = self.dim
        b = basis(n, M)
        row = np.zeros(b.size, dtype=complex)
        row[0] = self.e
        for i in range(n):
            unit = tuple(int(i == j) for j in range(n))
            row[b.index[unit]] = self.frequency[i]
        head = FourierTaylorSeries(n, M, fourier_cutoff, np.zeros((1, n), dtype=np.int64), row[None])
        return head + self.hbar.with_cutoffs(max(M, self.hbar.taylor_cutoff), fourier_cutoff)

    def grad_hbar(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized gradient of hbar at real points, (P, n) -> (P, n)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        cols = [self.hbar.d_y(i).evaluate_many(pts).real for i in range(self.dim)]
        return np.column_stack(cols)


@dataclass(frozen=True)
class Generator:
    F: FourierTaylorSeries

    def __post_init__(self):
        if self.F.modes.shape[0] and np.any(~np.any(self.F.modes != 0, axis=1)):
            raise ValueError("generator must have zero angle average")

    @property
    def is_zero(self) -> bool:
        return self.F.is_zero


def truncate(P: FourierTaylorSeries, K_plus: int, m: int):
    """Split P = R + tail with R holding |k|_1 <= K_plus and |iota|_1 <= m."""
    if K_plus < 1 or m < 1:
        raise ValueError("truncate needs K_plus >= 1 and m >= 1")
    n = P.dim
    low = np.abs(P.modes).sum(axis=1) <= K_plus
    deg_ok = P.basis.degree <= m
    mask = low[:, None] & deg_ok[None, :]
    R = FourierTaylorSeries(n, P.taylor_cutoff, P.fourier_cutoff, P.modes.copy(),
                            np.where(mask, P.coef, 0))
    tail = FourierTaylorSeries(n, P.taylor_cutoff, P.fourier_cutoff, P.modes.copy(),
                               np.where(mask, 0, P.coef))
    return R.with_cutoffs(min(m, P.taylor_cutoff), min(K_plus, P.fourier_cutoff)), tail


def _rowwise_product(A: np.ndarray, B: np.ndarray, n: int, m: int) -> np.ndarray:
    """Row-by-row truncated product of Taylor coefficient rows in basis(n, m)."""
    ta, tb, collect = _product_table(n, m, m, m)
    return (A[:, ta] * B[:, tb]) @ collect


@dataclass
class HomologicalInfo:
    worst_small_divisor: float = np.inf
    worst_safety_ratio: float = 0.0
    modes: int = 0


def solve_homological(nf: NormalForm, R: FourierTaylorSeries, dp: DiophantineParams, m: int,
                      *, s: float | None = None, info: HomologicalInfo | None = None) -> Generator:
    """Solve {N, F} + R - [R] = 0 for F up to Taylor degree m.

    On each Fourier mode k the divisor i<k, omega + d_y hbar(y)> is inverted
    by its Neumann series about y = 0, cut at degree m.  With ``s`` given, the
    y-dependent part must satisfy |<k, d_y hbar>|_s |k|^tau < gamma0 / 2.
    """
    n = nf.dim
    osc = R.oscillating_part().with_cutoffs(m, R.fourier_cutoff)
    if osc.is_zero:
        return Generator(FourierTaylorSeries.zero(n, m, R.fourier_cutoff))
    modes = osc.modes
    knorm = np.abs(modes).sum(axis=1).astype(float)

    base = modes @ nf.omega0
    bound = dp.gamma / knorm**dp.tau
    bad = np.abs(base) <= bound
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SmallDivisorBreach(
            f"|<k, omega0>| = {abs(base[i]):.3e} <= gamma0/|k|^tau = {bound[i]:.3e} at k = {tuple(modes[i])}")

    d0 = modes @ nf.frequency
    # q_k(y) = <k, d_y hbar(y)> as rows in basis(n, m)
    grads = np.array([nf.hbar.d_y(i).with_cutoffs(m, 0).block([0] * n) for i in range(n)])
    Q = modes.astype(complex) @ grads
    if info is not None:
        info.modes = int(modes.shape[0])
        info.worst_small_divisor = float(np.min(np.abs(base) * knorm**dp.tau))
    if s is not None and np.any(Q):
        w = float(s) ** basis(n, m).degree
        qn = (np.abs(Q) @ w) * knorm**dp.tau
        ratio = qn / (dp.gamma / 2)
        if info is not None:
            info.worst_safety_ratio = float(np.max(ratio))
        if np.any(ratio >= 1):
            i = int(np.argmax(ratio))
            raise SafetyMarginBreach(
                f"|<k, d_y hbar>| |k|^tau = {qn[i]:.3e} >= gamma0/2 at k = {tuple(modes[i])}; shrink s")

    # 1/(d0 + q) = (1/d0) sum_j (-q/d0)^j, exact through degree m since q(0) = 0
    step = -Q / d0[:, None]
    term = np.zeros_like(Q)
    term[:, 0] = 1.0
    inv = term.copy()
    for _ in range(m):
        term = _rowwise_product(term, step, n, m)
        if not np.any(term):
            break
        inv += term
    inv /= d0[:, None]
    Fcoef = _rowwise_product(inv, osc.coef, n, m) * (-1j)
    return Generator(FourierTaylorSeries(n, m, osc.fourier_cutoff, modes.copy(), Fcoef))


def homological_residual(nf: NormalForm, R: FourierTaylorSeries, gen: Generator,
                         m: int, domain) -> float:
    """Majorant of ({N, F} + R - [R]) restricted to Taylor degree <= m - 1."""
    M = m + max(nf.hbar.taylor_cutoff, 1)
    N = nf.as_series(M, R.fourier_cutoff)
    res = poisson_bracket(N, gen.F, M, R.fourier_cutoff) + R.oscillating_part()
    return res.restrict_degree(0, m - 1).weighted_norm(domain)


@dataclass
class LieResult:
    series: FourierTaylorSeries
    terms_used: int
    remainder: float
    term_norms: list = field(default_factory=list)


def lie_transform(H: FourierTaylorSeries, F: FourierTaylorSeries, domain, *, order: int = 8,
                  taylor_cutoff: int | None = None, fourier_cutoff: int | None = None,
                  rel_tol: float = 1e-16, check_stall: bool = True) -> LieResult:
    """H o phi_F^1 = sum_j L_F^j H / j!, L_F G = {G, F}.

    Terms are accumulated until ``order`` or until a term drops below
    rel_tol times the first-order term.  The remainder estimate is twice the
    last computed term.
    """
    M = H.taylor_cutoff if taylor_cutoff is None else taylor_cutoff
    K = max(H.fourier_cutoff, F.fourier_cutoff) if fourier_cutoff is None else fourier_cutoff
    H = H.with_cutoffs(M, K)
    if F.is_zero:
        return LieResult(H, 0, 0.0, [H.weighted_norm(domain)])
    total = H
    term = H
    norms = [H.weighted_norm(domain)]
    first = None
    used = 0
    for j in range(1, order + 1):
        term = poisson_bracket(term, F, M, K).scale(1.0 / j)
        tn = term.weighted_norm(domain)
        norms.append(tn)
        used = j
        if term.is_zero:
            break
        total = total + term
        if first is None:
            first = tn
        if check_stall and j == max(order // 2, 2) and norms[j - 1] > 0 and tn / norms[j - 1] >= 0.5:
            raise LieSeriesStalled(
                f"Lie terms not contracting: |T{j}|/|T{j - 1}| = {tn / norms[j - 1]:.3g}")
        if tn < rel_tol * first:
            break
    return LieResult(total, used, 2.0 * norms[-1], norms)


def lie_compose(nf: NormalForm, P: FourierTaylorSeries, gen: Generator, domain, *,
                lie_order: int = 8, taylor_cutoff: int | None = None,
                fourier_cutoff: int | None = None, rel_tol: float = 1e-16) -> LieResult:
    """(N + P) o phi_F^1 with working cutoffs."""
    M = P.taylor_cutoff if taylor_cutoff is None else taylor_cutoff
    K = max(P.fourier_cutoff, gen.F.fourier_cutoff) if fourier_cutoff is None else fourier_cutoff
    H = nf.as_series(M, K) + P.with_cutoffs(M, K)
    return lie_transform(H, gen.F, domain, order=lie_order, taylor_cutoff=M,
                         fourier_cutoff=K, rel_tol=rel_tol)


def split_normal_form(H: FourierTaylorSeries, omega0) -> tuple[NormalForm, FourierTaylorSeries]:
    """Partition H into its angle-independent normal form and oscillating rest."""
    n = H.dim
    H = H.realify()
    avg = H.angle_average()
    row = avg.block([0] * n) if not avg.is_zero else np.zeros(H.basis.size, dtype=complex)
    b = H.basis
    e = float(row[0].real)
    lin = np.array([row[b.index[tuple(int(i == j) for j in range(n))]].real
                    if H.taylor_cutoff >= 1 else 0.0 for i in range(n)])
    omega0 = np.asarray(omega0, dtype=float)
    hbar = avg.restrict_degree(2)
    return NormalForm(e, omega0, hbar, lin - omega0), H.oscillating_part()


def extract_normal_form(composed: FourierTaylorSeries, nf_old: NormalForm):
    """Returns (nf_new, P_plus, p00, p01).

    nf_new takes every angle-independent term of ``composed``; P_plus is the
    oscillating remainder, so nf_new.as_series() + P_plus == composed.
    """
    nf_new, P_plus = split_normal_form(composed, nf_old.omega0)
    p00 = nf_new.e - nf_old.e
    p01 = nf_new.drift - nf_old.drift
    return nf_new, P_plus, p00, p01


def translate_action(nf: NormalForm, P: FourierTaylorSeries, shift, m: int | None = None,
                     s: float | None = None):
    """Recentre the actions, y -> y + shift, exactly.

    The constant goes to e, the linear part to the frequency (drift) and
    degree >= 2 to hbar.  Raises ShiftTooLarge if |shift| >= s/4.
    """
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.size != nf.dim:
        raise DimensionMismatch("shift dimension")
    if s is not None and not np.linalg.norm(shift) < s / 4:
        raise ShiftTooLarge(f"|shift| = {np.linalg.norm(shift):.3e} >= s/4 = {s / 4:.3e}")
    if not np.any(shift):
        return nf, P
    M = max(P.taylor_cutoff, nf.hbar.taylor_cutoff, 1) if m is None else m
    H = nf.as_series(M, P.fourier_cutoff) + P.with_cutoffs(M)
    return split_normal_form(H.shift_y(shift), nf.omega0)
