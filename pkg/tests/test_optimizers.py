import math

import numpy as np
import pytest

from oclab.core import ChainHessian, InvalidInput, NumericalFailure
from oclab.hard_instances import HardInstance, build_convex, build_strongly_convex
from oclab.optimizers import (
    CubicSubproblem,
    QuadraticProblem,
    agd,
    anpe,
    anpe_restart,
    cubic_newton,
    cubic_stationarity,
    cubic_subproblem_solve,
    epoch_length,
    gradient_descent,
    hybrid,
    newton_linesearch,
    switch_threshold,
)


def model(g, H, M, h):
    return g @ h + 0.5 * h @ H @ h + M / 6 * np.linalg.norm(h) ** 3


# cubic subproblem --------------------------------------------------------------------


def test_cubic_1d_example():
    h = cubic_subproblem_solve(CubicSubproblem(np.array([1.0, 0.0]), np.eye(2), 6.0))
    t = (-1 + math.sqrt(13)) / 6
    assert np.allclose(h, [-t, 0.0], atol=1e-12)
    assert abs(t - 0.434259) < 1e-6


def test_cubic_zero_gradient():
    h = cubic_subproblem_solve(CubicSubproblem(np.zeros(3), np.diag([1.0, 2.0, 0.0]), 1.0))
    assert np.all(h == 0)


def test_cubic_scaling(rng):
    g, A = rng.standard_normal(5), rng.standard_normal((5, 5))
    H = A + A.T
    h1 = cubic_subproblem_solve(CubicSubproblem(g, H, 2.0))
    h2 = cubic_subproblem_solve(CubicSubproblem(7 * g, 7 * H, 14.0))
    assert np.allclose(h1, h2, atol=1e-10)


def test_cubic_hard_case():
    # g orthogonal to the bottom eigenvector e1: r = 2, h2 = -1/3, |h1| = sqrt(4 - 1/9)
    H, g = np.diag([-1.0, 2.0]), np.array([0.0, 1.0])
    h = cubic_subproblem_solve(CubicSubproblem(g, H, 1.0))
    assert math.isclose(h[1], -1 / 3, rel_tol=1e-9)
    assert math.isclose(abs(h[0]), math.sqrt(4 - 1 / 9), rel_tol=1e-9)
    assert cubic_stationarity(g, H, 1.0, h) <= 1e-8


def test_cubic_global_minimality(rng):
    for _ in range(20):
        A = rng.standard_normal((4, 4))
        H, g, M = A + A.T, rng.standard_normal(4), rng.uniform(0.1, 5)
        h = cubic_subproblem_solve(CubicSubproblem(g, H, M))
        best = min(model(g, H, M, rng.standard_normal(4) * s) for s in np.logspace(-2, 1, 200))
        assert model(g, H, M, h) <= best + 1e-12


def test_cubic_invalid():
    with pytest.raises(InvalidInput):
        cubic_subproblem_solve(CubicSubproblem(np.ones(2), np.eye(2), 0.0))
    with pytest.raises(InvalidInput):
        cubic_subproblem_solve(CubicSubproblem(np.array([np.nan, 1.0]), np.eye(2), 1.0))


@pytest.mark.parametrize("m,d,shift", [(100, 100, 0.0), (100, 300, 0.0), (120, 200, 0.5)])
def test_structured_matches_dense(rng, m, d, shift):
    V = None if m == d else np.linalg.qr(rng.standard_normal((d, m)))[0]
    H = ChainHessian(rng.uniform(0, 2, m) + 2, rng.uniform(-1, 1, m - 1), shift, V, d)
    g = rng.standard_normal(d)
    a = cubic_subproblem_solve(CubicSubproblem(g, H, 2.0))
    b = cubic_subproblem_solve(CubicSubproblem(g, H.dense(), 2.0))
    assert np.max(np.abs(a - b)) <= 1e-10
    assert cubic_stationarity(g, H, 2.0, a) <= 1e-8 * (1 + np.linalg.norm(g))


# optimizers ----------------------------------------------------------------------------


class Counting:
    def __init__(self, problem):
        self.p = problem
        self.n = 0

    def __getattr__(self, name):
        return getattr(self.p, name)

    def oracle(self, w, order=2):
        self.n += 1
        return self.p.oracle(w, order)


def strong_instance():
    return HardInstance(build_strongly_convex(68, 1, 1, 694, 2))


def test_every_oracle_call_is_counted():
    for fn, kw in [(gradient_descent, {}), (agd, {}), (newton_linesearch, {}), (cubic_newton, {}), (anpe, {})]:
        P = Counting(HardInstance(build_convex(3, 2, 1, 8)))
        tr = fn(P, eps=1e-9, budget=300, **kw)
        assert tr.calls == P.n
        gaps = [r[1] for r in tr.records]
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))


def test_start_at_minimizer_terminates():
    P = HardInstance(build_convex(3, 2, 1, 8))
    for fn in (cubic_newton, anpe, agd, gradient_descent):
        tr = fn(P, w0=P.w_star, eps=1e-12, budget=50)
        assert tr.calls == 1 and tr.final_gap <= 1e-12 and tr.complete


def test_cubic_newton_on_quadratic():
    A = np.diag([1.0, 4.0, 9.0])
    P = QuadraticProblem(A, np.array([1.0, -2.0, 3.0]), mu2=1e-6)
    tr = cubic_newton(P, eps=1e-12, budget=10)
    assert tr.complete and tr.calls <= 4


def test_cubic_newton_doubly_exponential_tail():
    P = strong_instance()
    thr = switch_threshold(P.lam, P.mu2)
    # start where the gap is below the threshold: a damped move from w* toward 0
    w0 = P.w_star * (1 - 1e-4)
    assert P.suboptimality(w0) < thr
    tr = cubic_newton(P, w0=w0, eps=1e-300, budget=8)
    e = [g for g in tr.raw_gaps if g > 0]
    ll = [math.log2(math.log(1 / x)) for x in e]
    inc = np.diff(ll)
    assert len(inc) >= 2 and np.all(inc[:2] >= 0.8)


def test_agd_perfect_conditioning():
    A = 3.0 * np.eye(4)
    P = QuadraticProblem(A, np.ones(4))
    tr = agd(P, mode="strongly_convex", eps=1e-12, budget=20)
    assert tr.complete and tr.calls <= 3


def test_agd_strongly_convex_geometric():
    A = np.diag(np.linspace(1.0, 100.0, 30))
    P = QuadraticProblem(A, np.ones(30))
    tr = agd(P, mode="strongly_convex", eps=1e-10, budget=2000)
    assert tr.complete
    # sqrt(100) = 10: the gap drops by a constant factor every O(10) calls
    assert tr.calls <= 30 * 10


def test_gd_quadratic_and_budget():
    P = QuadraticProblem(np.array([[2.0]]), np.array([1.0]))
    tr = gradient_descent(P, eps=1e-14, budget=100, L=4.0)
    ratios = [b / a for a, b in zip(tr.raw_gaps, tr.raw_gaps[1:]) if a > 1e-14]
    assert np.allclose(ratios, 0.25, rtol=1e-6)
    tr = gradient_descent(P, eps=0.0, budget=5, L=400.0)
    assert tr.calls == 5 and not tr.complete


def test_newton_ls_quadratic_one_step():
    P = QuadraticProblem(np.diag([1.0, 10.0]), np.array([1.0, 1.0]))
    tr = newton_linesearch(P, eps=1e-12, budget=10)
    assert tr.complete and tr.calls == 2


def test_newton_ls_damped_far_away():
    P = strong_instance()
    tr = newton_linesearch(P, eps=1e-9, budget=2000)
    assert tr.complete
    assert len(tr.marks.get("damped", [])) > 0


def test_epoch_length_example():
    assert epoch_length(1.0, 1.0, 1.0, 1.0) == 2


def test_anpe_inner_budget_failure():
    P = HardInstance(build_convex(3, 2, 1, 8))
    with pytest.raises(NumericalFailure):
        anpe(P, eps=1e-12, budget=100, inner_budget=1, sigma_l=0.49, sigma_u=0.5)


def test_anpe_restart_halving():
    tr = anpe_restart(strong_instance(), eps=1e-300, budget=2000)
    epochs = tr.params["epochs"]
    assert len(epochs) >= 2
    assert all(b <= a / 2 for a, b in epochs)
    assert "switch" in tr.marks


def test_hybrid_skips_to_phase_two():
    P = QuadraticProblem(np.diag([1.0, 2.0]), np.array([1e-3, 1e-3]), mu2=1.0)
    assert P.f_star > -switch_threshold(P.lam, P.mu2)
    tr = hybrid(P, eps=1e-14, budget=20)
    assert tr.marks["switch"] == [1]
    assert tr.complete
