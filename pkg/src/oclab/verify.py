"""Sampling-based calculus checks: finite differences, Lipschitz and curvature probes.

The Lipschitz and curvature probes work in chain coordinates. Differences of
derivatives only live on ``span(V)`` and ``|w - w'| >= |y - y'|``, so the
chain view gives the largest ratios; nothing is lost by skipping the rotation.
All probes are deterministic given ``seed``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .core import InvalidInput
from .hard_instances import (
    ChainSpec,
    Family,
    HardInstance,
    _term_rows,
    chain_hessian_bands,
    derivative_form,
)
from .minimizers import fhat_gradient, solve


def extreme_eigenvalues(d, o):
    """(min, max) eigenvalue of a symmetric tridiagonal matrix."""
    if len(d) == 1:
        return float(d[0]), float(d[0])
    lo = eigvalsh_tridiagonal(d, o, select="i", select_range=(0, 0))[0]
    hi = eigvalsh_tridiagonal(d, o, select="i", select_range=(len(d) - 1, len(d) - 1))[0]
    return float(lo), float(hi)


def _as_problem(obj):
    return HardInstance(obj) if isinstance(obj, ChainSpec) else obj


def fd_check(instance, w, order: int = 1, step: Optional[float] = None, max_dirs: int = 256,
             seed: int = 0) -> float:
    """Max relative deviation between analytic and central-difference derivatives.

    Order 1 differences values to check the gradient, order 2 differences
    gradients to check the Hessian. Above ``max_dirs`` coordinates, random
    unit directions replace the coordinate axes.
    """
    prob = _as_problem(instance)
    w = np.asarray(w, dtype=float)
    if order not in (1, 2):
        raise InvalidInput("order must be 1 or 2")
    h = 1e-5 * (1 + float(np.linalg.norm(w))) if step is None else float(step)
    if not h > 0:
        raise InvalidInput("step must be positive")
    n = prob.dim
    if n <= max_dirs:
        dirs = np.eye(n)
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((max_dirs, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r0 = prob.oracle(w, order)
    err = 0.0
    if order == 1:
        ref = max(1.0, float(np.max(np.abs(r0.gradient))))
        for u in dirs:
            fd = (prob.oracle(w + h * u, 0).value - prob.oracle(w - h * u, 0).value) / (2 * h)
            err = max(err, abs(fd - float(r0.gradient @ u)) / ref)
        return err
    Hu_ref = [r0.hessian_matvec(u) for u in dirs]
    ref = max(1.0, max(float(np.max(np.abs(v))) for v in Hu_ref))
    for u, Hu in zip(dirs, Hu_ref):
        fd = (prob.oracle(w + h * u, 1).gradient - prob.oracle(w - h * u, 1).gradient) / (2 * h)
        err = max(err, float(np.max(np.abs(fd - Hu))) / ref)
    return err


def analytic_bound(spec: ChainSpec, derivative_order: int) -> float:
    """Lipschitz constant of the ``derivative_order``-th derivative claimed for the family."""
    if spec.family is Family.KORDER:
        if derivative_order != spec.k:
            raise InvalidInput("k-th order instances are certified for the k-th derivative only")
        return spec.mu2_or_muk
    if derivative_order == 1:
        return 2 * spec.mu2_or_muk * spec.delta / 3 + spec.lam
    if derivative_order == 2:
        return spec.mu2_or_muk
    raise InvalidInput("smoothed-cubic instances are certified for orders 1 and 2")


def _sample_pairs(spec: ChainSpec, n: int, seed: int, radius: float):
    """Segment endpoints in a ball around the origin, plus adversarial patterns.

    Half the pairs are Gaussian; the rest alternate signs along the chain so
    that consecutive differences saturate both branches of g.
    """
    rng = np.random.default_rng(seed)
    m = spec.n_chain
    for i in range(n):
        kind = i % 3
        if kind == 0:
            a, b = rng.standard_normal(m), rng.standard_normal(m)
        elif kind == 1:
            alt = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
            a = alt * rng.uniform(0, 1, m)
            b = a + rng.standard_normal(m) * 10 ** rng.uniform(-3, 0)
        else:
            a = rng.standard_normal(m)
            b = a + rng.standard_normal(m) * 10 ** rng.uniform(-6, 0)
        s = radius * rng.uniform(0.01, 1) / max(np.linalg.norm(a), 1e-300)
        yield a * s, b * s


def _radius(spec: ChainSpec) -> float:
    if spec.family is Family.STRONGLY_CONVEX and spec.n_chain > 4096:
        base = math.sqrt(2 * spec.gamma**1.75 / spec.lam_tilde**1.5)
    else:
        base = float(np.linalg.norm(solve(spec).chain_coords))
    if spec.delta is not None:
        base = max(base, 2 * spec.delta)  # make sure the quadratic branch is reached
    return 2 * max(base, 1e-3)


def lipschitz_probe(instance, derivative_order: int, n_segments: int = 1000, seed: int = 0,
                    n_dirs: int = 1000, radius: Optional[float] = None) -> float:
    """Largest sampled ratio |D^j f(w) - D^j f(w')| / |w - w'|.

    Orders 1 and 2 use exact norms (the Hessian difference is tridiagonal in
    chain coordinates). Higher orders maximize the multilinear-form
    difference over ``n_dirs`` random unit direction tuples plus the
    normalized term directions.
    """
    spec = instance.spec if isinstance(instance, HardInstance) else instance
    j = int(derivative_order)
    R = radius if radius is not None else _radius(spec)
    best = 0.0
    s = spec.scale
    if j >= 3 or (spec.family is Family.KORDER and j == spec.k and j >= 3):
        return _probe_forms(spec, j, n_segments, seed, n_dirs, R)
    for a, b in _sample_pairs(spec, n_segments, seed, R):
        dist = float(np.linalg.norm(a - b))
        if dist == 0:
            continue
        if j == 1:
            ga = s * fhat_gradient(spec, a)
            gb = s * fhat_gradient(spec, b)
            best = max(best, float(np.linalg.norm(ga - gb)) / dist)
        elif j == 2:
            da, oa = chain_hessian_bands(spec, a)
            db, ob = chain_hessian_bands(spec, b)
            dd, od = s * (da - db), s * (oa - ob)
            lo, hi = extreme_eigenvalues(dd, od)
            best = max(best, max(abs(lo), abs(hi)) / dist)
        else:
            raise InvalidInput("derivative order must be >= 1")
    return best


def _probe_forms(spec: ChainSpec, j: int, n_segments: int, seed: int, n_dirs: int, R: float) -> float:
    rng = np.random.default_rng(seed + 1)
    m = spec.n_chain
    U = rng.standard_normal((n_dirs, m))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    # term directions r_i / |r_i| are where single terms peak
    Rt = np.array([_term_rows(spec, e) for e in np.eye(m)]).T
    Rt /= np.linalg.norm(Rt, axis=1, keepdims=True)
    U = np.vstack([U, Rt])
    Ur = np.array([_term_rows(spec, u) for u in U])  # (n_dirs, n_terms)
    best = 0.0
    for a, b in _sample_pairs(spec, n_segments, seed, R):
        dist = float(np.linalg.norm(a - b))
        if dist == 0:
            continue
        c = spec.scale * (spec.g(_term_rows(spec, a), j) - spec.g(_term_rows(spec, b), j))
        # symmetric tensor on (u,...,u); the symmetric norm equals the diagonal sup
        vals = np.abs((Ur**j) @ c)
        best = max(best, float(vals.max()) / dist)
    return best


def kth_form_lipschitz_pairs(spec: ChainSpec, w, w2, dirs) -> float:
    """|D^k f(w)[dirs] - D^k f(w2)[dirs]| in ambient coordinates (for spot checks)."""
    return abs(derivative_form(spec, w, dirs) - derivative_form(spec, w2, dirs))


def convexity_probe(instance, n_pairs: int = 1000, seed: int = 0, radius: Optional[float] = None) -> float:
    """Minimum of u^T H(w) u over sampled points and unit directions.

    Each sample also includes the bottom eigenvector of the chain Hessian,
    so the value is the exact minimum eigenvalue over the sampled points.
    """
    spec = instance.spec if isinstance(instance, HardInstance) else instance
    R = radius if radius is not None else _radius(spec)
    rng = np.random.default_rng(seed)
    m = spec.n_chain
    best = math.inf
    for i, (a, _) in enumerate(_sample_pairs(spec, n_pairs, seed, R)):
        d, o = chain_hessian_bands(spec, a)
        d, o = spec.scale * d, spec.scale * o
        ev = extreme_eigenvalues(d, o)[0]
        u = rng.standard_normal(m)
        u /= np.linalg.norm(u)
        q = float(d @ (u * u) + 2 * o @ (u[:-1] * u[1:])) if m > 1 else float(d[0])
        best = min(best, float(ev), q)
    return best + spec.lam


@dataclass
class VerifyReport:
    family: str
    fd_gradient: float
    fd_hessian: float
    lipschitz: dict
    bounds: dict
    min_curvature: float
    curvature_floor: float
    term_gram_norm: float

    @property
    def passed(self) -> bool:
        ok = self.fd_gradient <= 1e-6 and self.term_gram_norm <= 4 + 1e-12
        ok &= self.min_curvature >= self.curvature_floor - 1e-10
        for j, v in self.lipschitz.items():
            ok &= v <= self.bounds[j] * (1 + 1e-8)
        return bool(ok)

    def to_json(self, **kw) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, **kw)


def verify_spec(spec: ChainSpec, n_points: int = 100, n_segments: int = 1000, seed: int = 0) -> VerifyReport:
    """Run every probe applicable to ``spec`` and collect the results."""
    from .hard_instances import term_gram_norm

    prob = HardInstance(spec)
    rng = np.random.default_rng(seed)
    R = _radius(spec)
    fd1 = fd2 = 0.0
    for _ in range(n_points):
        w = rng.standard_normal(prob.dim)
        w *= R * rng.uniform(0.05, 1) / np.linalg.norm(w)
        fd1 = max(fd1, fd_check(prob, w, 1))
        if spec.family is not Family.KORDER or spec.k >= 2:
            fd2 = max(fd2, fd_check(prob, w, 2))
    orders = [spec.k] if spec.family is Family.KORDER else [1, 2]
    lip = {j: lipschitz_probe(spec, j, n_segments, seed) for j in orders}
    bounds = {j: analytic_bound(spec, j) for j in orders}
    return VerifyReport(spec.family.value, fd1, fd2, lip, bounds, convexity_probe(spec, n_segments, seed),
                        spec.lam, term_gram_norm(spec))
