import math

import numpy as np
import pytest

from oclab.core import InvalidInput
from oclab.hard_instances import (
    ChainSpec,
    Family,
    HardInstance,
    build_convex,
    build_korder,
    evaluate,
)
from oclab.verify import (
    analytic_bound,
    convexity_probe,
    extreme_eigenvalues,
    fd_check,
    lipschitz_probe,
    verify_spec,
)


def small_strong():
    # the smoothness lemma assumes scale = mu2 / 12
    return ChainSpec(Family.STRONGLY_CONVEX, 2, 10.0, 3.0, 0.5, 4.0, 1.5, 2, 30, 60, 3.0 / 12)


def test_extreme_eigenvalues(rng):
    d, o = rng.standard_normal(30), rng.standard_normal(29)
    ev = np.linalg.eigvalsh(np.diag(d) + np.diag(o, 1) + np.diag(o, -1))
    lo, hi = extreme_eigenvalues(d, o)
    assert math.isclose(lo, ev[0], rel_tol=1e-12) and math.isclose(hi, ev[-1], rel_tol=1e-12)


@pytest.mark.parametrize("spec", [small_strong(), build_convex(3, 2, 1, 8), build_korder(2, 1.0, 1.0, 6)],
                         ids=["strong", "convex", "korder2"])
def test_fd_check_random_points(spec, rng):
    P = HardInstance(spec)
    worst = max(fd_check(P, rng.standard_normal(P.dim) * rng.uniform(0.1, 3), 1) for _ in range(100))
    assert worst <= 1e-6


def test_fd_hessian_exact_on_quadratic_branch():
    spec = ChainSpec(Family.CONVEX, 2, 1.0, 1.0, 0.0, 1.0, 0.01, 4, None, 8, 1.0)
    P = HardInstance(spec)
    # every term sits beyond delta = 0.01 in magnitude, with room for the difference step
    w = np.array([4.0, 3.0, 2.0, 1.0])
    assert fd_check(P, w, 2, step=1e-3) <= 1e-9


def test_fd_step_rejected():
    P = HardInstance(build_convex(3, 2, 1, 4))
    with pytest.raises(InvalidInput):
        fd_check(P, np.zeros(P.dim), 1, step=0.0)


def test_strong_lipschitz_bounds():
    spec = small_strong()
    assert lipschitz_probe(spec, 1, 300) <= analytic_bound(spec, 1) == 2 * 3.0 * 1.5 / 3 + 0.5
    assert lipschitz_probe(spec, 2, 300) <= analytic_bound(spec, 2) == 3.0


def test_korder3_lipschitz_bound():
    spec = build_korder(3, 2.5, 1.0, 4)
    assert lipschitz_probe(spec, 3, 300, n_dirs=300) <= 2.5


def test_probe_deterministic():
    spec = small_strong()
    assert lipschitz_probe(spec, 2, 50, seed=4) == lipschitz_probe(spec, 2, 50, seed=4)


def test_convexity_floors():
    assert convexity_probe(small_strong(), 200) >= 0.5 - 1e-12
    assert convexity_probe(build_convex(3, 2, 1, 8), 200) >= -1e-12


def test_curvature_along_v1_at_origin():
    spec = small_strong()
    v1 = spec.basis.vectors[0]
    H = evaluate(spec, np.zeros(spec.dim), 2).hessian_dense()
    assert v1 @ H @ v1 == pytest.approx(0.5, abs=1e-15)


def test_verify_spec_report():
    rep = verify_spec(build_korder(3, 2.0, 1.0, 4), n_points=5, n_segments=100)
    assert rep.passed
    assert '"passed": true' in rep.to_json()
