"""Resisting-oracle games against deterministic algorithms.

The adversary reveals chain direction ``v_t`` only after seeing query
``w_t``, choosing it orthogonal to every query so far and every earlier
direction. Replies at ``w_t`` then depend on ``v_1..v_t`` alone, so the
algorithm learns at most one new direction per call.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .core import (
    AlgorithmFault,
    Basis,
    DimensionExhausted,
    InvalidInput,
    OracleReply,
    RunTrace,
    orthonormal_extension,
)
from .hard_instances import (
    ChainSpec,
    Family,
    build_convex,
    build_korder,
    build_strongly_convex,
    evaluate,
    reply_from_chain,
)
from .minimizers import solve, solve_generic

Algorithm = Callable[[List[OracleReply], int], np.ndarray]


# Adaptive basis -------------------------------------------------------------------------


@dataclass
class AdversaryState:
    dim: int
    seed: int = 0
    revealed: List[np.ndarray] = field(default_factory=list)
    query_log: List[np.ndarray] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    @property
    def revealed_matrix(self) -> np.ndarray:
        if not self.revealed:
            return np.zeros((self.dim, 0))
        return np.column_stack(self.revealed)

    def _constraints(self) -> np.ndarray:
        cols = self.query_log + self.revealed
        return np.column_stack(cols) if cols else np.zeros((self.dim, 0))

    def extend(self, count: int) -> np.ndarray:
        """Reveal ``count`` further directions orthogonal to everything seen."""
        if count <= 0:
            return np.zeros((self.dim, 0))
        V = orthonormal_extension(self.dim, count, self.rng, self._constraints())
        self.revealed.extend(V.T.copy())
        return V


def next_basis_vector(state: AdversaryState, new_query) -> np.ndarray:
    w = np.asarray(new_query, dtype=float)
    if w.shape != (state.dim,):
        raise InvalidInput(f"query has shape {w.shape}, expected ({state.dim},)")
    state.query_log.append(w.copy())
    try:
        return state.extend(1)[:, 0]
    except DimensionExhausted:
        state.query_log.pop()
        raise


# Games ----------------------------------------------------------------------------------------


def build_family(family, params: dict, T: int, seed: int = 0) -> ChainSpec:
    """Instance for a T-round game, before any adaptive basis is attached.

    Convex and k-th order games are played on the chain of length 2T with the
    parameters chosen for horizon T; the strongly convex chain already has
    length T_tilde >= 2T.
    """
    family = Family(family)
    if family is Family.STRONGLY_CONVEX:
        return build_strongly_convex(params["mu1"], params["mu2"], params["lam"], params["D"], T, seed)
    if family is Family.CONVEX:
        base = build_convex(params["mu1"], params["mu2"], params["D"], T, seed)
    else:
        base = build_korder(params["k"], params["muk"], params["D"], T, seed)
    return base.with_chain_length(2 * T)


def game_dimension(spec: ChainSpec, rounds: int) -> int:
    """Room for ``rounds`` queries plus every chain direction."""
    return max(spec.dim, spec.n_chain + rounds)


@dataclass
class GameResult:
    spec: ChainSpec
    trace: RunTrace
    queries: List[np.ndarray]
    f_star: float
    gaps: List[float]

    def to_dict(self) -> dict:
        digest = hashlib.sha256(np.stack(self.queries).tobytes()).hexdigest() if self.queries else ""
        return {
            "spec": self.spec.to_dict(),
            "f_star": self.f_star,
            "gaps": self.gaps,
            "queries_sha256": digest,
            "basis_sha256": hashlib.sha256(self.spec.basis.vectors.tobytes()).hexdigest(),
            "trace": self.trace.to_dict(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _reply(spec: ChainSpec, w: np.ndarray, V: np.ndarray, order: int) -> OracleReply:
    # w is orthogonal to v_t.. by construction; pin those chain coordinates at 0
    t = V.shape[1]
    y = np.zeros(spec.n_chain)
    y[: t - 1] = V[:, : t - 1].T @ w
    return reply_from_chain(spec, w, y, V, order)


def run_resisting_game(algorithm: Algorithm, family=None, params: Optional[dict] = None, T: int = 1,
                       seed: int = 0, order: int = 2, spec: Optional[ChainSpec] = None,
                       algorithm_id: str = "custom") -> GameResult:
    """Play ``T`` rounds and score every query on the completed instance.

    ``algorithm(replies, dim)`` must return the next query from the replies
    so far (an empty list for the first query). Pass either ``family`` and
    ``params`` (builder arguments) or a ready ``spec`` whose chain is at
    least ``T + 1`` long.
    """
    if spec is None:
        spec = build_family(family, params or {}, T, seed)
    if spec.n_chain < T:
        raise InvalidInput("chain too short for the number of rounds")
    if spec.family is Family.KORDER:
        order = min(order, spec.k)  # a k-th order oracle reveals derivatives up to k
    d = game_dimension(spec, T)
    state = AdversaryState(d, seed, params=dict(params or {}))
    replies: List[OracleReply] = []
    queries = []
    for t in range(1, T + 1):
        w = np.asarray(algorithm(list(replies), d), dtype=float)
        if w.shape != (d,) or not np.all(np.isfinite(w)):
            raise AlgorithmFault(f"round {t}: algorithm returned an invalid point")
        next_basis_vector(state, w)
        queries.append(w.copy())
        replies.append(_reply(spec, w, state.revealed_matrix, order))
    state.extend(spec.n_chain - len(state.revealed))
    basis = Basis(np.stack(state.revealed), seed)
    final = replace(spec, dim=d, explicit_basis=basis)
    f_star = solve(final).f_star
    trace = RunTrace(algorithm_id, {"family": spec.family.value, "T": T, "seed": seed})
    gaps = []
    for t, w in enumerate(queries, 1):
        r = evaluate(final, w, 1)
        gap = r.value - f_star
        gaps.append(float(gap))
        trace.add(t, gap, float(np.linalg.norm(r.gradient)), 0.0)
    trace.complete = True
    return GameResult(final, trace, queries, f_star, gaps)


# Gap certificates -----------------------------------------------------------------------------


@dataclass
class GapBound:
    family: str
    T: int
    computed: float
    floor: float
    details: dict = field(default_factory=dict)


def convex_gap_floor(mu1, mu2, D, T) -> float:
    return min(mu2 * D**3 / (30000 * T**3.5), mu1 * D**2 / (576 * T**2))


def korder_gap_floor(k, muk, D, T) -> float:
    return muk * math.sqrt(2) ** (k + 1) * D ** (k + 1) / (
        12 * 3 ** (k + 1) * math.factorial(k + 1) * k * T ** ((3 * k + 1) / 2)
    )


def chain_gap(spec_T: ChainSpec) -> float:
    """min f_T - min f_2T for a convex or k-th order spec (same gamma)."""
    return solve(spec_T).f_star - solve(spec_T.with_chain_length(2 * spec_T.T)).f_star


def gap_lower_bound(family, params: dict, T: int) -> GapBound:
    """Suboptimality every algorithm must have after T rounds of the game.

    Convex and k-th order: the exact ``min f_T - min f_2T`` with the analytic
    floor. Strongly convex: after T rounds the query is orthogonal to
    ``v_T..``, so the certified gap is the minimum of ``f`` over that
    subspace minus ``f*``; the floor is the larger of the two
    ``lam/2 <v, w*>^2`` terms.
    """
    family = Family(family)
    if family is Family.CONVEX:
        spec = build_convex(params["mu1"], params["mu2"], params["D"], T)
        return GapBound(family.value, T, chain_gap(spec), convex_gap_floor(params["mu1"], params["mu2"], params["D"], T),
                        {"regime": spec.regime, "gamma": spec.gamma})
    if family is Family.KORDER:
        spec = build_korder(params["k"], params["muk"], params["D"], T)
        return GapBound(family.value, T, chain_gap(spec), korder_gap_floor(params["k"], params["muk"], params["D"], T),
                        {"gamma": spec.gamma})
    spec = params["spec"] if "spec" in params else build_strongly_convex(
        params["mu1"], params["mu2"], params["lam"], params["D"], T)
    return strongly_convex_gap(spec, T)


def strongly_convex_gap(spec: ChainSpec, T: int) -> GapBound:
    from .minimizers import property_report

    sol = solve(spec)
    y = sol.chain_coords
    sub = solve_generic(spec, window=T - 1) if T > 1 else None
    f_sub = spec.scale * sub.f_hat if sub is not None else 0.0
    computed = f_sub - sol.f_star
    lam = spec.lam
    term_T = 0.5 * lam * y[T - 1] ** 2 if T - 1 < len(y) else 0.0
    rep = property_report(spec, sol)
    term_t0 = 0.0
    if rep.witness_t0 is not None and rep.witness_t0 + T - 1 < len(y):
        term_t0 = 0.5 * lam * y[rep.witness_t0 + T - 1] ** 2
    # strong convexity: f(w) - f* >= lam/2 |w - w*|^2 >= lam/2 sum_{i>=T} w*_i^2;
    # unlike the difference of minima this stays accurate far below eps * |f*|
    tail = 0.5 * lam * float(np.sum(y[T - 1:] ** 2))
    computed = max(computed, tail)
    return GapBound(spec.family.value, T, float(computed), float(max(term_T, term_t0)),
                    {"term_vT": term_T, "term_vt0T": term_t0, "t0": rep.witness_t0, "distance_bound": tail})


# Information hiding ----------------------------------------------------------------------------------


def verify_information_hiding(spec: ChainSpec, w, t: int, seed: int = 1, tol: float = 1e-10,
                              probes: int = 8) -> bool:
    """Check that replies at ``w`` ignore ``v_{t+1}, ...`` (1-based ``t``).

    ``w`` must be orthogonal to ``v_t, v_{t+1}, ...``. The later directions
    are redrawn with another seed (still orthonormal to ``v_1..v_t`` and to
    ``w``) and value, gradient and Hessian are compared.
    """
    V = spec.basis.matrix
    w = np.asarray(w, dtype=float)
    if not 1 <= t <= spec.n_chain:
        raise InvalidInput("t out of range")
    scale_w = max(1.0, float(np.linalg.norm(w)))
    if np.max(np.abs(V[:, t - 1:].T @ w)) > 1e-10 * scale_w:
        raise InvalidInput("w is not orthogonal to v_t and later directions")
    rng = np.random.default_rng(seed)
    keep = V[:, :t]
    new = orthonormal_extension(spec.dim, spec.n_chain - t, rng, np.column_stack([keep, w]))
    V2 = np.column_stack([keep, new])
    order = min(2, spec.k) if spec.family is Family.KORDER else 2
    r1 = evaluate(spec, w, order, V)
    r2 = evaluate(spec, w, order, V2)
    ref = max(1.0, abs(r1.value), float(np.linalg.norm(r1.gradient)))
    if abs(r1.value - r2.value) > tol * ref:
        return False
    if np.max(np.abs(r1.gradient - r2.gradient)) > tol * ref:
        return False
    if order < 2:
        return True
    if spec.dim <= 512:
        H1, H2 = r1.hessian_dense(), r2.hessian_dense()
        return bool(np.max(np.abs(H1 - H2)) <= tol * max(1.0, float(np.max(np.abs(H1)))))
    # large dimensions: probe with random vectors and with the redrawn directions
    U = np.column_stack([rng.standard_normal((spec.dim, probes)), new[:, : min(probes, new.shape[1])]])
    for u in U.T:
        a, b = r1.hessian_matvec(u), r2.hessian_matvec(u)
        if np.max(np.abs(a - b)) > tol * max(1.0, float(np.linalg.norm(a))) * max(1.0, float(np.linalg.norm(u))):
            return False
    return True


# Built-in deterministic algorithms ------------------------------------------------------------------------


def zero_algorithm() -> Algorithm:
    return lambda replies, dim: np.zeros(dim)


def _replay(step):
    """Turn ``step(w, reply, state) -> (w_next, state)`` into a pure callback."""

    def alg(replies, dim):
        w = np.zeros(dim)
        state = None
        for r in replies:
            w, state = step(w, r, state)
        return w

    return alg


def gd_algorithm(L: float) -> Algorithm:
    return _replay(lambda w, r, s: (w - r.gradient / L, s))


def agd_algorithm(L: float) -> Algorithm:
    def step(y, r, s):
        x_prev, t = s if s is not None else (y, 1.0)
        x = y - r.gradient / L
        tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        return x + ((t - 1) / tn) * (x - x_prev), (x, tn)

    return _replay(step)


def cubic_newton_algorithm(M: float) -> Algorithm:
    from .optimizers import CubicSubproblem, cubic_subproblem_solve

    def step(w, r, s):
        H = r.hessian if r.hessian is not None else np.zeros((len(w), len(w)))  # first-order replies
        return w + cubic_subproblem_solve(CubicSubproblem(r.gradient, H, M)), s

    return _replay(step)


def builtin_algorithm(name: str, spec: ChainSpec) -> Algorithm:
    """Zero, GD, AGD or cubic Newton with step constants taken from ``spec``."""
    if spec.family is Family.KORDER:
        # no global gradient Lipschitz constant; a conservative step
        L = spec.mu2_or_muk * max(1.0, spec.gamma) * 4.0
        M = spec.mu2_or_muk * 4.0
    else:
        L = 2 * spec.mu2_or_muk * spec.delta / 3 + spec.lam
        M = spec.mu2_or_muk
    if name == "zero":
        return zero_algorithm()
    if name == "gd":
        return gd_algorithm(L)
    if name == "agd":
        return agd_algorithm(L)
    if name == "cubic-newton":
        return cubic_newton_algorithm(M)
    raise InvalidInput(f"unknown algorithm {name!r}")


BUILTIN_ALGORITHMS = ("zero", "gd", "agd", "cubic-newton")
