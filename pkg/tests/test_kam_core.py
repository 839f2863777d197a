import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from strategies import float_series
from kamiter.assumptions import DiophantineParams
from kamiter.errors import (
    SafetyMarginBreach,
    ShiftTooLarge,
    SmallDivisorBreach,
    LieSeriesStalled,
)
from kamiter.kam_core import (
    Generator,
    NormalForm,
    extract_normal_form,
    homological_residual,
    lie_compose,
    lie_transform,
    solve_homological,
    translate_action,
    truncate,
)
from kamiter.kam_driver import RunOptions, init_step0
from kamiter.models import make_pro2
from kamiter.series import FourierTaylorSeries as FTS, poisson_bracket

GOLDEN = np.array([1.0, (math.sqrt(5) - 1) / 2])
DP = DiophantineParams(0.3, 2.0)


def quad(n, i=0, M=2):
    iota = [0] * n
    iota[i] = 2
    return FTS.from_terms(n, {((0,) * n, tuple(iota)): 0.5}, M)


# ---------------------------------------------------------------------------
# truncate


def test_truncate_examples():
    K, m = 3, 2
    P = FTS.from_terms(1, {((0,), (m + 1,)): 1.0}, 4, 4)
    R, tail = truncate(P, K, m)
    assert R.is_zero and tail.equals(P)
    P = FTS.cos_kx((1, 0), 2, 3) + FTS.y(2, 1, 2, 3)
    R, tail = truncate(P, 3, 2)
    assert R.equals(P) and tail.is_zero
    high = FTS.from_terms(2, {((K + 1, 0), (2, 0)): 1.0}, 2, K + 1)
    R, tail = truncate(FTS.cos_kx((1, 0), 2, K + 1) + high, K, 2)
    assert R.equals(FTS.cos_kx((1, 0))) and tail.equals(high)
    with pytest.raises(ValueError):
        truncate(P, 0, 2)


@settings(max_examples=60, deadline=None)
@given(float_series(), st.integers(1, 6), st.integers(1, 6))
def test_truncate_partition_exact(P, K, m):
    R, tail = truncate(P, K, m)
    assert (R + tail).equals(P)
    assert all(sum(map(abs, k)) <= K and sum(i) <= m for k, i, _ in R.terms())


# ---------------------------------------------------------------------------
# homological equation


def test_homological_cosine():
    nf = NormalForm.unperturbed(GOLDEN)
    R = FTS.cos_kx((1, 0), 2)
    F = solve_homological(nf, R, DP, 2).F
    assert F.coeff((1, 0), (0, 0)) == pytest.approx(1 / (2j * GOLDEN[0]), abs=1e-16)
    # F = sin(x1) / omega_1
    sin = (FTS.exp_ikx((1, 0)) - FTS.exp_ikx((-1, 0))).scale(-0.5j / GOLDEN[0])
    assert F.max_abs_diff(sin) <= 1e-16
    assert homological_residual(nf, R, Generator(F), 2, (0.5, 0.5)) == 0


def test_homological_average_only():
    nf = NormalForm.unperturbed(GOLDEN)
    R = FTS.constant(2, 3.0, 2) + quad(2)
    assert solve_homological(nf, R, DP, 2).is_zero


@pytest.mark.parametrize("m", [1, 3, 6])
def test_homological_neumann_series(m):
    nf = NormalForm.unperturbed([1.0], quad(1, M=m + 1))
    R = FTS.exp_ikx((1,), m)
    F = solve_homological(nf, R, DiophantineParams(0.5, 1.0), m, s=0.1).F
    # 1 / (i (1 + y)) = -i sum (-y)^j
    for j in range(m + 1):
        assert F.coeff((1,), (j,)) == pytest.approx(-1j * (-1) ** j, abs=1e-15)
    assert homological_residual(nf, R, Generator(F), m, (0.1, 0.5)) <= 1e-15


def test_homological_errors():
    nf = NormalForm.unperturbed([1.0, 1.0])
    R = FTS.cos_kx((1, -1), 2)
    with pytest.raises(SmallDivisorBreach):
        solve_homological(nf, R, DiophantineParams(0.1, 2.0), 2)
    nf = NormalForm.unperturbed([1.0], quad(1, M=4))
    with pytest.raises(SafetyMarginBreach):
        solve_homological(nf, FTS.cos_kx((1,), 3), DiophantineParams(0.5, 1.0), 3, s=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_homological_residual_random(seed):
    rng = np.random.default_rng(seed)
    K, m = 6, 4
    terms = {}
    for k in rng.integers(-3, 4, (12, 2)):
        iota = tuple(int(v) for v in rng.integers(0, 3, 2))
        terms[(tuple(int(v) for v in k), iota)] = complex(*rng.uniform(-1, 1, 2))
    R = FTS.from_terms(2, terms, m, K).realify()
    s = 0.1 * 0.15 / (2 * K**3)
    nf = NormalForm.unperturbed(GOLDEN, quad(2, 0, m + 1) + quad(2, 1, m + 1))
    gen = solve_homological(nf, R, DiophantineParams(0.15, 2.0), m, s=s)
    assert gen.F.angle_average().is_zero
    res = homological_residual(nf, R, gen, m, (s, 0.5))
    assert res <= 1e-10 * max(R.weighted_norm((s, 0.5)), 1e-300)


# ---------------------------------------------------------------------------
# Lie series


def test_lie_zero_generator_is_identity():
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=4))
    P = FTS.cos_kx((1, 1), 4).scale(1e-3)
    gen = Generator(FTS.zero(2, 4, 2))
    out = lie_compose(nf, P, gen, (0.1, 0.5))
    assert out.series.equals(nf.as_series(4, 2) + P) and out.terms_used == 0


def test_lie_first_order_cancellation():
    eps = 1e-4
    nf = NormalForm.unperturbed(GOLDEN)
    P = FTS.cos_kx((1, 0), 3).scale(eps)
    gen = solve_homological(nf, P, DP, 3)
    out = lie_compose(nf, P, gen, (0.1, 0.5), taylor_cutoff=3, fourier_cutoff=4).series
    for k in ((1, 0), (-1, 0)):
        assert abs(out.coeff(k, (0, 0))) <= 1e-20
    _, P_plus, _, _ = extract_normal_form(out, nf)
    assert P_plus.weighted_norm((0.1, 0.5)) <= 10 * eps**2


def test_lie_stall_detected():
    F = FTS.cos_kx((1,), 1, 1).scale(50.0) * FTS.y(1, 0, 1, 1)
    H = FTS.y(1, 0, 1, 1) + FTS.cos_kx((1,), 1, 1)
    with pytest.raises(LieSeriesStalled):
        lie_transform(H, F.realify(), (1.0, 0.5), order=8, fourier_cutoff=12)


def _flow(F, z0, t=1.0):
    n = F.dim
    dx = [F.d_x(i) for i in range(n)]
    dy = [F.d_y(i) for i in range(n)]

    def rhs(_, z):
        y, x = z[:n], z[n:]
        ydot = [-g.evaluate(y, x).real for g in dx]
        xdot = [g.evaluate(y, x).real for g in dy]
        return np.array(ydot + xdot)

    sol = solve_ivp(rhs, (0, t), z0, method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:, -1]


def _pro2_step1():
    model = make_pro2()
    state, sched = init_step0(model, 1e-6, RunOptions())
    plan = sched.plan()
    K_plus = int(plan.K_plus)
    R, _ = truncate(state.P, K_plus, sched.m)
    gen = solve_homological(state.nf, R, sched.dp, sched.m, s=sched.s)
    K_work = max(2 * K_plus, state.P.fourier_cutoff)
    lie = lie_compose(state.nf, state.P, gen, sched.domain, taylor_cutoff=state.P.taylor_cutoff,
                      fourier_cutoff=K_work)
    H = state.nf.as_series(state.P.taylor_cutoff, K_work) + state.P
    return H, gen.F, lie.series, sched.s


def _large_generator():
    # a generator 10^4 times the pro2 one, so that phi_F moves points visibly
    nf = NormalForm.unperturbed(GOLDEN, quad(2, 0, 6) + quad(2, 1, 6))
    P = (FTS.cos_kx((1, 0), 6, 2) + FTS.cos_kx((1, 1), 6, 2) * FTS.y(2, 1, 6, 2)).scale(1e-2)
    gen = solve_homological(nf, P, DP, 4, s=0.01)
    lie = lie_compose(nf, P, gen, (0.1, 0.5), lie_order=14, taylor_cutoff=6, fourier_cutoff=30,
                      rel_tol=0.0)
    H = nf.as_series(6, 30) + P.with_cutoffs(6, 30)
    return H, gen.F, lie.series, 0.1


@pytest.mark.parametrize("case", [_pro2_step1, _large_generator])
def test_lie_matches_flow_oracle(case):
    H, F, composed, s = case()
    rng = np.random.default_rng(7)
    moved = 0.0
    for _ in range(20):
        y = rng.uniform(-1, 1, 2)
        y *= s / 2 * rng.uniform() / np.linalg.norm(y)
        x = rng.uniform(0, 2 * np.pi, 2)
        z1 = _flow(F, np.concatenate([y, x]))
        lhs = composed.evaluate(y, x)
        rhs = H.evaluate(z1[:2], z1[2:])
        assert abs(lhs - rhs) <= 1e-8
        moved = max(moved, abs(H.evaluate(y, x) - rhs))
    assert moved > 0


def test_flow_is_symplectic():
    _, F, _, s = _large_generator()
    J = np.block([[np.zeros((2, 2)), -np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(20):
        z = np.concatenate([rng.uniform(-s / 2, s / 2, 2) / math.sqrt(2), rng.uniform(0, 6, 2)])
        Phi = np.empty((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            Phi[:, j] = (_flow(F, z + e) - _flow(F, z - e)) / (2 * h)
        assert np.max(np.abs(Phi.T @ J @ Phi - J)) <= 1e-6


# ---------------------------------------------------------------------------
# normal form extraction and translation


def test_extract_examples():
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=3))
    N = nf.as_series(3, 2)
    nf2, P, p00, p01 = extract_normal_form(N, nf)
    assert p00 == 0 and np.all(p01 == 0) and P.is_zero
    nf3, P, p00, p01 = extract_normal_form(N + 3.0 + FTS.y(2, 0, 3, 2).scale(2), nf)
    assert p00 == 3 and np.array_equal(p01, [2, 0]) and P.is_zero
    assert nf3.hbar.equals(nf.hbar)


@settings(max_examples=40, deadline=None)
@given(float_series(M=4, K=3, i_max=3, k_max=3))
def test_extract_partition_exact(X):
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=4))
    composed = (nf.as_series(4, 3) + X).realify()
    nf_new, P_plus, _, _ = extract_normal_form(composed, nf)
    assert (nf_new.as_series(4, 3) + P_plus).max_abs_diff(composed) <= 1e-15
    assert P_plus.angle_average().is_zero


def test_translate_zero_is_identity():
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=4))
    P = FTS.cos_kx((1, 0), 4)
    assert translate_action(nf, P, [0.0, 0.0]) == (nf, P)


def test_translate_quadratic():
    a = 0.03
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=4))
    nf2, P2 = translate_action(nf, FTS.zero(2, 4), [a, 0.0], s=1.0)
    assert nf2.drift == pytest.approx([a, 0.0], rel=1e-14, abs=1e-17)
    assert nf2.hbar.max_abs_diff(nf.hbar) <= 1e-17
    # the constant also collects <omega, a> from the linear part
    assert nf2.e == pytest.approx(a * a / 2 + a * GOLDEN[0], rel=1e-14)
    assert P2.is_zero


def test_translate_pro2_gradient():
    model = make_pro2()
    nf = NormalForm.unperturbed(model.omega, model.hbar())
    shift = np.array([0.02, -0.05])
    nf2, _ = translate_action(nf, FTS.zero(2, 4), shift, s=1.0)
    assert nf2.drift == pytest.approx(shift * (shift**2).sum(), rel=1e-11)


def test_translate_roundtrip_and_limit():
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=5) + quad(2, 1, 5))
    P = (FTS.cos_kx((1, -1), 5, 2) * FTS.y(2, 0, 5, 2)).scale(0.1) + FTS.cos_kx((0, 1), 5, 2)
    shift = np.array([0.011, -0.007])
    nf1, P1 = translate_action(nf, P, shift, s=0.1)
    nf2, P2 = translate_action(nf1, P1, -shift, s=0.1)
    assert (nf2.as_series(5, 2) + P2).max_abs_diff(nf.as_series(5, 2) + P) <= 1e-12
    with pytest.raises(ShiftTooLarge):
        translate_action(nf, P, [0.03, 0.0], s=0.1)


def test_generator_rejects_average():
    with pytest.raises(ValueError):
        Generator(FTS.constant(2, 1.0))


def test_bracket_with_normal_form_matches_divisor():
    nf = NormalForm.unperturbed(GOLDEN, quad(2, M=3))
    F = FTS.exp_ikx((1, 2), 3)
    got = poisson_bracket(nf.as_series(3, 3), F, 3, 3)
    # {N, e^{ikx}} = -i <k, omega + d_y hbar> e^{ikx}
    want = FTS.exp_ikx((1, 2), 3).scale(-1j * (GOLDEN @ [1, 2])) + \
        (FTS.exp_ikx((1, 2), 3) * FTS.y(2, 0, 3, 3)).scale(-1j)
    assert got.max_abs_diff(want) <= 1e-16
