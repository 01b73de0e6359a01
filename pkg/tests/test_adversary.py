import math

import numpy as np
import pytest

from oclab.adversary import (
    BUILTIN_ALGORITHMS,
    AdversaryState,
    builtin_algorithm,
    build_family,
    chain_gap,
    gap_lower_bound,
    next_basis_vector,
    run_resisting_game,
    verify_information_hiding,
    zero_algorithm,
)
from oclab.core import DimensionExhausted, InvalidInput
from oclab.hard_instances import ChainSpec, Family, build_convex, build_korder, evaluate


def test_first_vector_deterministic():
    a = next_basis_vector(AdversaryState(4, seed=11), np.zeros(4))
    b = next_basis_vector(AdversaryState(4, seed=11), np.zeros(4))
    assert np.array_equal(a, b)
    assert math.isclose(np.linalg.norm(a), 1.0, rel_tol=1e-15)


def test_last_direction_is_forced(rng):
    Q = rng.standard_normal((4, 3))
    st = AdversaryState(4, seed=3, query_log=[Q[:, 0], Q[:, 1]])
    v = next_basis_vector(st, Q[:, 2])
    null = np.linalg.svd(Q.T)[2][-1]
    assert math.isclose(abs(v @ null), 1.0, rel_tol=1e-12)
    with pytest.raises(DimensionExhausted):
        next_basis_vector(st, np.zeros(4))


def test_zero_algorithm_convex():
    T = 3
    g = run_resisting_game(zero_algorithm(), "convex", {"mu1": 1e6, "mu2": 12.0, "D": 1.0}, T=T, seed=5)
    spec = g.spec
    v1 = spec.basis.vectors[0]
    r = evaluate(spec, np.zeros(spec.dim), 2)
    assert r.value == 0.0 and np.allclose(r.gradient, -spec.scale * spec.gamma * v1)
    expected = spec.scale * (2 / 3) * spec.gamma**1.5 * 2 * T / math.sqrt(1 + 4 * T * T)
    assert math.isclose(g.gaps[-1], expected, rel_tol=1e-10)


def test_chain_gap_example():
    spec = ChainSpec(Family.CONVEX, 2, 1.0, 12.0, 0.0, 1.0, 1e3, 2, None, 4, 1.0)
    expected = (2 / 3) * (4 / math.sqrt(17) - 2 / math.sqrt(5))
    assert abs(expected - 0.050477) < 1e-6
    assert math.isclose(chain_gap(spec), expected, rel_tol=1e-10)


@pytest.mark.parametrize("family,params", [
    ("convex", {"mu1": 3.0, "mu2": 2.0, "D": 1.0}),
    ("convex", {"mu1": 0.2, "mu2": 3.0, "D": 10.0}),
    ("korder", {"k": 1, "muk": 1.0, "D": 1.0}),
    ("korder", {"k": 3, "muk": 2.0, "D": 1.0}),
])
@pytest.mark.parametrize("T", [2, 4])
def test_builtin_algorithms_sound(family, params, T):
    bound = gap_lower_bound(family, params, T).computed
    spec = build_family(family, params, T)
    for name in BUILTIN_ALGORITHMS:
        g = run_resisting_game(builtin_algorithm(name, spec), spec=spec, T=T, seed=2)
        assert min(g.gaps) >= bound * (1 - 1e-9), name


def test_replay_bit_identical():
    params = {"mu1": 3.0, "mu2": 2.0, "D": 1.0}
    spec = build_family("convex", params, 4)
    alg = builtin_algorithm("agd", spec)
    a = run_resisting_game(alg, spec=spec, T=4, seed=9).to_json()
    b = run_resisting_game(alg, spec=spec, T=4, seed=9).to_json()
    assert a == b


def test_information_hiding_examples(rng):
    spec = build_convex(3, 2, 1, 6)
    assert verify_information_hiding(spec, np.zeros(spec.dim), 1)
    V = spec.basis.matrix
    w = V[:, :3] @ rng.standard_normal(3)
    assert verify_information_hiding(spec, w, 4)
    with pytest.raises(InvalidInput):
        verify_information_hiding(spec, w + V[:, 3], 4)


def test_korder_first_order_game_runs():
    spec = build_family("korder", {"k": 1, "muk": 1.0, "D": 1.0}, 3)
    g = run_resisting_game(builtin_algorithm("cubic-newton", spec), spec=spec, T=3)
    assert len(g.gaps) == 3


def test_floor_values():
    from oclab.adversary import convex_gap_floor, korder_gap_floor
    assert math.isclose(convex_gap_floor(1e9, 1.0, 1.0, 1), 1 / 30000)
    assert math.isclose(korder_gap_floor(1, 1.0, 1.0, 1), 2 / (12 * 9 * 2))
