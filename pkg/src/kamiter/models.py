"""Concrete Hamiltonian families.

Each family is H = e + <omega, y> + hbar(y) + eps P, packaged with its
frequency map, a solution route and the qualitative outcome it should show.

* ``action``: the frequency is tuned by recentring the actions y.
* ``parameter``: the frequency is tuned through an external parameter xi.
* ``closed_form``: one-dimensional, angle-free; roots are explicit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .assumptions import FrequencyMap, diophantine_gamma
from .series import FourierTaylorSeries

GOLDEN = (1.0, (math.sqrt(5) - 1) / 2)


@dataclass(frozen=True)
class HamiltonianFamily:
    name: str
    dim: int
    route: str
    omega: np.ndarray
    frequency_map: FrequencyMap
    hbar_builder: Callable[[np.ndarray], FourierTaylorSeries]
    perturbation_builder: Callable[[np.ndarray, float], FourierTaylorSeries]
    param_box: tuple
    known_L: float | None = None
    known_degree: int | None = None
    outcome: str = "converges"
    s: float = 1.0
    r: float = 0.5
    meta: dict = field(default_factory=dict)

    def hbar(self, xi=None) -> FourierTaylorSeries:
        return self.hbar_builder(self._xi(xi))

    def perturbation(self, eps: float, xi=None) -> FourierTaylorSeries:
        """The full eps * P, already scaled."""
        return self.perturbation_builder(self._xi(xi), eps)

    def frequency(self, xi=None) -> np.ndarray:
        return self.frequency_map(self._xi(xi))

    def _xi(self, xi):
        return np.zeros(self.dim) if xi is None else np.asarray(xi, dtype=float).reshape(-1)

    def gamma(self, tau: float, K: int = 200) -> float:
        return diophantine_gamma(self.omega, tau, K)

    def expected_outcome(self, eps: float) -> str:
        rule = self.meta.get("outcome_rule")
        return rule(eps) if rule else self.outcome


def _power_sum(n: int, p: int, coeff: float, taylor_cutoff: int) -> FourierTaylorSeries:
    """coeff * |y|^(2p) expanded by the multinomial theorem."""
    terms = {}
    zero = (0,) * n

    def rec(i, left, exps, mult):
        if i == n - 1:
            e = exps + (2 * left,)
            terms[(zero, e)] = terms.get((zero, e), 0) + coeff * mult
            return
        for a in range(left, -1, -1):
            rec(i + 1, left - a, exps + (2 * a,), mult * math.comb(left, a))

    rec(0, p, (), 1)
    return FourierTaylorSeries.from_terms(n, terms, taylor_cutoff, 0)


def _monomial_1d(power: int, coeff: float, taylor_cutoff: int) -> FourierTaylorSeries:
    return FourierTaylorSeries.from_terms(1, {((0,), (power,)): coeff}, taylor_cutoff, 0)


def _grad_pro2(omega, l):
    def one(y):
        return omega + y * np.dot(y, y) ** l

    def many(ys):
        return omega + ys * (np.sum(ys * ys, axis=1, keepdims=True) ** l)

    return one, many


def make_pro2(l: int = 1, omega=GOLDEN, n: int | None = None, *, perturbation: str = "cos",
              taylor_cutoff: int | None = None) -> HamiltonianFamily:
    """h(y) = <omega, y> + |y|^(2l+2)/(2l+2), degenerate at y = 0.

    ``perturbation`` is "cos" (P = cos x1) or "y1+cos" (P = y1 + cos x1, whose
    linear drift forces an action translation).
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    omega = np.asarray(omega, dtype=float).reshape(-1)
    n = omega.size if n is None else n
    if omega.size != n:
        raise ValueError("omega has the wrong dimension")
    M = taylor_cutoff if taylor_cutoff is not None else 2 * l + 2
    hbar = _power_sum(n, l + 1, 1.0 / (2 * l + 2), max(M, 2 * l + 2))
    one, many = _grad_pro2(omega, l)
    fm = FrequencyMap(n, tuple((-1.0, 1.0) for _ in range(n)), one, eval_many=many)
    e1 = tuple(int(i == 0) for i in range(n))

    def pert(xi, eps):
        P = FourierTaylorSeries.cos_kx(e1, taylor_cutoff=1, fourier_cutoff=1)
        if perturbation == "y1+cos":
            P = P + FourierTaylorSeries.y(n, 0, 1, 1)
        elif perturbation != "cos":
            raise ValueError(f"unknown perturbation {perturbation!r}")
        return P.scale(eps)

    return HamiltonianFamily(
        name="pro2", dim=n, route="action", omega=omega, frequency_map=fm,
        hbar_builder=lambda xi: hbar, perturbation_builder=pert,
        param_box=fm.domain_box, known_L=2 * l + 1, known_degree=1, outcome="converges",
        s=1.0, r=0.5, meta={"l": l, "perturbation": perturbation},
    )


def make_cor1(ell: int = 1, omega: float = 1.0) -> HamiltonianFamily:
    """1-D h(y) = omega y + y^(2l+1)/(2l+1) with eps P = eps y.

    h'(y) - h'(0) = y^(2l) is even, so the degree at 0 is 0 and
    y^(2l) + eps = 0 has no real root for eps > 0.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    p = 2 * ell + 1
    hbar = _monomial_1d(p, 1.0 / p, p)
    fm = FrequencyMap(1, ((-1.0, 1.0),), lambda y: omega + y ** (2 * ell),
                      eval_many=lambda ys: omega + ys ** (2 * ell))
    return HamiltonianFamily(
        name="cor1", dim=1, route="action", omega=np.array([float(omega)]), frequency_map=fm,
        hbar_builder=lambda xi: hbar,
        perturbation_builder=lambda xi, eps: FourierTaylorSeries.y(1, 0, 1, 0).scale(eps),
        param_box=fm.domain_box, known_L=None, known_degree=0, outcome="no_solution",
        meta={"ell": ell, "outcome_rule": lambda eps: "no_solution" if eps > 0 else "converges"},
    )


def make_th3(case: int = 1, ell: int = 1, eps_sign_demo: float = -1.0,
             omega: float = 1.0) -> HamiltonianFamily:
    """1-D h(y) = omega y + g(y), eps P = eps y.

    case 1: g = y^(2l+1)/(2l+1), two tori if eps < 0, destroyed if eps > 0.
    case 2: g = y^(2l+2)/(2l+2), one torus for every small eps.
    """
    if case not in (1, 2):
        raise ValueError("case must be 1 or 2")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    p = 2 * ell + case
    hbar = _monomial_1d(p, 1.0 / p, p)
    fm = FrequencyMap(1, ((-1.0, 1.0),), lambda y: omega + y ** (p - 1),
                      eval_many=lambda ys: omega + ys ** (p - 1))
    if case == 1:
        rule = lambda eps: "two_tori" if eps < 0 else ("converges" if eps == 0 else "destroyed")
    else:
        rule = lambda eps: "converges"
    return HamiltonianFamily(
        name=f"th3_case{case}", dim=1, route="closed_form", omega=np.array([float(omega)]),
        frequency_map=fm, hbar_builder=lambda xi: hbar,
        perturbation_builder=lambda xi, eps: FourierTaylorSeries.y(1, 0, 1, 0).scale(eps),
        param_box=fm.domain_box, known_L=p - 1, known_degree=1 if case == 2 else 0,
        outcome=rule(eps_sign_demo),
        meta={"case": case, "ell": ell, "power": p, "outcome_rule": rule},
    )


@dataclass(frozen=True)
class ClosedFormResult:
    outcome: str
    roots: tuple
    bisection_roots: tuple


def solve_th3(family: HamiltonianFamily, eps: float, box=(-1.0, 1.0)) -> ClosedFormResult:
    """Roots of g'(y) = -eps P'(y) in the box, explicit and by bisection.

    The bisection pass brackets sign changes of g'(y) + eps on a fine grid
    and polishes each with brentq; it cross-checks the explicit roots.
    """
    q = family.meta["power"] - 1       # g'(y) = y^q
    lo, hi = box
    if eps == 0:
        roots = (0.0,)
    elif q % 2 == 1:
        roots = (-math.copysign(abs(eps) ** (1.0 / q), eps),)
    elif eps < 0:
        a = (-eps) ** (1.0 / q)
        roots = (-a, a)
    else:
        roots = ()
    roots = tuple(r for r in roots if lo < r < hi)

    f = lambda y: y**q + eps
    grid = np.linspace(lo, hi, 4001)
    vals = f(grid)
    found = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0:
            found.append(float(a))
        elif fa * fb < 0:
            found.append(brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    if len(roots) == 0:
        outcome = "destroyed"
    elif len(roots) >= 2:
        outcome = "two_tori"
    else:
        outcome = "converges"
    return ClosedFormResult(outcome, roots, tuple(found))


def pro1_omega2(xi2, omega2_bar: float):
    """Plateau frequency: flat on [-1/2, 1/2], C^infinity bumps outside."""
    x = np.asarray(xi2, dtype=float)
    out = np.full(x.shape, float(omega2_bar))
    left = x < -0.5
    right = x > 0.5
    with np.errstate(divide="ignore", over="ignore"):
        out[left] += np.exp(-1.0 / (x[left] + 0.5) ** 2)
        out[right] -= np.exp(-1.0 / (x[right] - 0.5) ** 2)
    return out


def pro1_P0(eps: float, ell: int) -> float:
    return 0.0 if eps == 0 else eps**ell * math.sin(1.0 / eps)


def make_pro1(ell: int = 1, omega_bar=GOLDEN) -> HamiltonianFamily:
    """Parameter family with a plateau in omega_2; eps P = P0(eps) y2.

    The map is extended continuously to the closed box [-1, 1]^2.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    wb = np.asarray(omega_bar, dtype=float).reshape(2)

    def many(xis):
        xis = np.asarray(xis, dtype=float).reshape(-1, 2)
        return np.column_stack([wb[0] + xis[:, 0], pro1_omega2(xis[:, 1], wb[1])])

    fm = FrequencyMap(2, ((-1.0, 1.0), (-1.0, 1.0)), lambda xi: many(xi)[0], eval_many=many)

    def pert(xi, eps):
        return FourierTaylorSeries.y(2, 1, 1, 0).scale(pro1_P0(eps, ell))

    return HamiltonianFamily(
        name="pro1", dim=2, route="parameter", omega=wb, frequency_map=fm,
        hbar_builder=lambda xi: FourierTaylorSeries.zero(2, 2), perturbation_builder=pert,
        param_box=fm.domain_box, known_L=None, known_degree=-1,
        outcome="discontinuous_parameter", meta={"ell": ell},
    )


def make_custom(spec: dict | str | Path) -> HamiltonianFamily:
    """Action-route family from {omega, hbar_terms, perturbation_terms}.

    Terms are {"k": [...], "iota": [...], "re": x, "im": y}; hbar terms must
    have k = 0 and degree >= 2.  The perturbation is multiplied by eps.
    """
    if isinstance(spec, (str, Path)):
        text = Path(spec).read_text() if Path(str(spec)).exists() else str(spec)
        spec = json.loads(text)
    omega = np.asarray(spec["omega"], dtype=float).reshape(-1)
    n = omega.size

    def series(terms):
        out = {}
        for t in terms:
            k = tuple(t.get("k", [0] * n))
            key = (k, tuple(t["iota"]))
            out[key] = out.get(key, 0) + complex(t.get("re", 0.0), t.get("im", 0.0))
        M = max([sum(i) for _, i in out] + [2])
        K = max([sum(map(abs, k)) for k, _ in out] + [0])
        return FourierTaylorSeries.from_terms(n, out, M, K)

    hbar = series(spec.get("hbar_terms", []))
    P = series(spec.get("perturbation_terms", []))
    if not P.is_real(1e-14):
        raise ValueError("custom perturbation must be real (conjugate-symmetric)")
    grads = [hbar.d_y(i) for i in range(n)]

    def many(ys):
        ys = np.asarray(ys, dtype=float).reshape(-1, n)
        return omega + np.column_stack([g.evaluate_many(ys).real for g in grads])

    fm = FrequencyMap(n, tuple((-1.0, 1.0) for _ in range(n)), lambda y: many(y)[0], eval_many=many)
    return HamiltonianFamily(
        name="custom", dim=n, route="action", omega=omega, frequency_map=fm,
        hbar_builder=lambda xi: hbar, perturbation_builder=lambda xi, eps: P.scale(eps),
        param_box=fm.domain_box, s=float(spec.get("s", 1.0)), r=float(spec.get("r", 0.5)),
    )


REGISTRY = {
    "pro2": make_pro2,
    "th3_case1": lambda **kw: make_th3(case=1, **kw),
    "th3_case2": lambda **kw: make_th3(case=2, **kw),
    "pro1": make_pro1,
    "cor1": make_cor1,
    "custom": make_custom,
}


def get_model(name: str, **params) -> HamiltonianFamily:
    if name not in REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(REGISTRY)}")
    return REGISTRY[name](**params)
