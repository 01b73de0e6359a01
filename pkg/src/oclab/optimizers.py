"""Upper-bound methods with exact oracle-call accounting.

Every optimizer talks to a problem through ``problem.oracle(w, order)``. One
such request is one oracle call, whatever the order. Work done on an already
fetched model (cubic subproblem iterations, linear solves) is free.

A problem exposes ``dim`` and ``oracle``; optionally ``f_star`` plus the
constants ``mu1`` (gradient Lipschitz), ``mu2`` (Hessian Lipschitz), ``lam``
(strong convexity) and ``D`` (distance to the minimizer).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .core import ChainHessian, InvalidInput, NumericalFailure, OracleReply, RunTrace


# Cubic-regularized model ------------------------------------------------------------------


@dataclass
class CubicSubproblem:
    """Model ``<g,h> + 1/2 <Hh,h> + M/6 |h|^3``."""

    g: np.ndarray
    H: object
    M: float


class _Spectral:
    """Eigen-decomposition of a dense or chain-structured symmetric matrix.

    Stores eigenvalues ``lams`` and the coordinates ``a`` of ``g`` in the
    eigenbasis; ``lift`` maps eigen-coordinates back to ambient space. For a
    :class:`ChainHessian` the complement of ``span(V)`` contributes one extra
    eigenvalue ``shift`` carrying the orthogonal part of ``g``.
    """

    def __init__(self, H, g):
        if isinstance(H, ChainHessian):
            self._init_chain(H, g)
        else:
            H = np.asarray(H, dtype=float)
            lams, Q = np.linalg.eigh(0.5 * (H + H.T))
            self.lams, self.a = lams, Q.T @ g
            self._Q = Q
            self._lift = lambda c: Q @ c
            self.bottom_vector = lambda: Q[:, 0]

    def _init_chain(self, H: ChainHessian, g):
        if H.m > 1:
            lams, U = eigh_tridiagonal(H.diag, H.off)
        else:
            lams, U = H.diag.copy(), np.ones((1, 1))
        gc = H.to_chain(g)
        perp = g - H.from_chain(gc)
        c = float(np.linalg.norm(perp))
        self.lams = lams + H.shift
        self.a = U.T @ gc
        has_perp = H.dim > H.m and c > 0
        if has_perp:
            self.lams = np.append(self.lams, H.shift)
            self.a = np.append(self.a, c)
            u = perp / c
        order = np.argsort(self.lams, kind="stable")
        self.lams, self.a = self.lams[order], self.a[order]
        m = H.m

        def lift(coef):
            full = np.empty(len(order))
            full[order] = coef
            out = H.from_chain(U @ full[:m])
            if has_perp:
                out = out + full[m] * u
            return out

        def bottom():
            j = order[0]
            if j < m:
                e = np.zeros(m)
                e[j] = 1.0
                return H.from_chain(U @ e)
            return u

        self._lift = lift
        self.bottom_vector = bottom

    def lift(self, coef):
        return self._lift(coef)


def cubic_subproblem_solve(p: CubicSubproblem, tol: float = 1e-10) -> np.ndarray:
    """Global minimizer of the cubic model via the secular equation in ``r = |h|``.

    Stationarity reads ``(H + sigma I) h = -g`` with ``sigma = M r / 2`` and
    ``H + sigma I`` positive semidefinite. We solve ``|h(sigma)| = 2 sigma / M``
    for sigma by Brent's method; the hard case (g with no weight on the bottom
    eigenvector) is completed along that eigenvector.
    """
    g = np.asarray(p.g, dtype=float)
    M = float(p.M)
    if not M > 0 or not math.isfinite(M):
        raise InvalidInput("M must be positive and finite")
    if not np.all(np.isfinite(g)):
        raise InvalidInput("g must be finite")
    if not isinstance(p.H, ChainHessian) and not np.all(np.isfinite(np.asarray(p.H))):
        raise InvalidInput("H must be finite")
    if isinstance(p.H, ChainHessian) and p.H.m > 64:
        h = _chain_psd_solve(g, p.H, M)
        if h is not None:
            return h
    sp = _Spectral(p.H, g)
    lams, a = sp.lams, sp.a
    lmin = float(lams[0])
    scale = max(1.0, float(np.max(np.abs(lams))))
    bottom = lams <= lmin + 1e-12 * scale
    # parameterize sigma = sig_lo + e with e >= 0: the denominators lams + sigma
    # become gaps + c0 + e, which stay accurate when sigma hugs -lmin
    sig_lo = max(0.0, -lmin)
    c0 = max(lmin, 0.0)
    gaps = lams - lmin

    def phi(e):
        with np.errstate(over="ignore"):
            return math.sqrt(float(np.sum((a / (gaps + c0 + e)) ** 2))) - 2.0 * (sig_lo + e) / M

    gnorm = float(np.linalg.norm(a))
    if gnorm == 0.0 and lmin >= 0:
        return np.zeros_like(g)
    a_bottom = float(np.linalg.norm(a[bottom]))
    if sig_lo > 0 and a_bottom <= 1e-14 * max(gnorm, 1e-300):
        # hard case: the partial solution is too short, finish along the bottom eigenvector
        rest = ~bottom
        coef = np.zeros_like(a)
        coef[rest] = -a[rest] / gaps[rest]
        hn = float(np.linalg.norm(coef))
        r = 2.0 * sig_lo / M
        if hn <= r:
            tau = math.sqrt(max(r * r - hn * hn, 0.0))
            return sp.lift(coef) + tau * sp.bottom_vector()
    if c0 > 0 and phi(0.0) <= 0:
        return sp.lift(-a / lams)
    lo = 1e-200 * scale
    while not phi(lo) > 0:
        lo *= 0.5
        if lo == 0.0:
            return sp.lift(-a / (gaps + c0))
    hi = math.sqrt(M * gnorm / 2.0) + 1.0
    while phi(hi) > 0:
        hi *= 2.0
    e = brentq(phi, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    return sp.lift(-a / (gaps + c0 + e))


def _chain_psd_solve(g, H: ChainHessian, M: float):
    """Secular equation with O(m) banded solves for a PSD chain Hessian.

    Returns None when ``H`` is indefinite (the spectral path handles that).
    """
    from .minimizers import _solve_tridiag
    from .verify import extreme_eigenvalues

    lmin, lmax = extreme_eigenvalues(H.diag, H.off)
    lmin += H.shift
    if lmin < 0:
        return None
    if not np.any(g):
        return np.zeros_like(g)
    gc = H.to_chain(g)
    perp = g - H.from_chain(gc)
    pn = float(np.linalg.norm(perp)) if H.dim > H.m else 0.0

    def h_parts(sigma):
        s = H.shift + sigma
        return _solve_tridiag(H.diag + s, H.off, -gc), s

    def phi(sigma):
        try:
            hc, s = h_parts(sigma)
        except (np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError):
            return math.inf
        if pn and s <= 0:
            return math.inf
        n2 = float(hc @ hc) + (pn / s) ** 2 if pn else float(hc @ hc)
        return math.sqrt(n2) - 2.0 * sigma / M

    scale = max(1.0, abs(lmax) + abs(H.shift))
    if lmin > 0 and phi(0.0) <= 0:
        lo = 0.0
        sigma = 0.0
    else:
        lo = 1e-14 * scale
        while not phi(lo) > 0:
            lo *= 1e-4
            if lo < 1e-300:
                return None
        hi = math.sqrt(M * float(np.linalg.norm(g)) / 2.0) + 1.0
        while phi(hi) > 0:
            hi *= 2.0
        with np.errstate(all="ignore"):
            sigma = brentq(phi, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    hc, s = h_parts(sigma)
    out = H.from_chain(hc)
    if pn:
        out = out - perp / s
    return out


def cubic_stationarity(g, H, M, h) -> float:
    Hh = H.matvec(h) if isinstance(H, ChainHessian) else np.asarray(H) @ h
    return float(np.linalg.norm(g + Hh + 0.5 * M * np.linalg.norm(h) * h))


def hessian_solve(H, b, shift: float = 0.0) -> np.ndarray:
    """Solve ``(H + shift I) x = b`` for dense or chain-structured ``H``."""
    if isinstance(H, ChainHessian):
        from .minimizers import _solve_tridiag

        s = H.shift + shift
        bc = H.to_chain(b)
        xc = _solve_tridiag(H.diag + s, H.off, bc)
        perp = b - H.from_chain(bc)
        out = H.from_chain(xc)
        if H.dim > H.m:
            out = out + perp / s
        return out
    A = np.asarray(H) + shift * np.eye(len(b))
    return np.linalg.solve(A, b)


# Oracle accounting -------------------------------------------------------------------------


class _Done(Exception):
    pass


class Session:
    """Counts oracle calls, records the trace and enforces eps/budget."""

    def __init__(self, problem, optimizer_id: str, eps: float, budget: int, params=None):
        self.problem = problem
        self.eps = eps
        self.budget = int(budget)
        self.f_star = getattr(problem, "f_star", None)
        self.lam = getattr(problem, "lam", 0.0) or 0.0
        self.trace = RunTrace(optimizer_id, dict(params or {}))
        self.t0 = time.perf_counter()
        self.calls = 0
        self.best = None

    def gap_of(self, reply: OracleReply, w=None) -> float:
        if w is not None and hasattr(self.problem, "suboptimality"):
            return float(self.problem.suboptimality(w))
        if self.f_star is not None:
            return max(reply.value - self.f_star, 0.0)
        if self.lam > 0 and reply.order >= 1:
            return float(reply.gradient @ reply.gradient) / (2 * self.lam)
        return math.nan

    def query(self, w, order: int = 2) -> OracleReply:
        if self.calls >= self.budget:
            raise _Done()
        reply = self.problem.oracle(w, order)
        self.calls += 1
        gap = self.gap_of(reply, w)
        gn = float(np.linalg.norm(reply.gradient)) if order >= 1 else math.nan
        self.trace.add(self.calls, gap, gn, 1e3 * (time.perf_counter() - self.t0))
        key = gap if not math.isnan(gap) else reply.value
        if self.best is None or key < self.best[0]:
            self.best = (key, np.array(w, dtype=float))
        if gap <= self.eps:
            self.trace.complete = True
            raise _Done()
        return reply

    @property
    def gap(self) -> float:
        return self.trace.final_gap

    def finish(self) -> RunTrace:
        self.trace.params.setdefault("eps", self.eps)
        self.trace.params.setdefault("budget", self.budget)
        return self.trace


def _run(problem, optimizer_id, eps, budget, params, body):
    s = Session(problem, optimizer_id, eps, budget, params)
    try:
        body(s)
    except _Done:
        pass
    return s.finish()


def _start(problem, w0):
    return np.zeros(problem.dim) if w0 is None else np.asarray(w0, dtype=float).copy()


# First-order methods ---------------------------------------------------------------------------


def gradient_descent(problem, w0=None, eps=1e-8, budget=1000, L: Optional[float] = None) -> RunTrace:
    L = float(L or problem.mu1)

    def body(s):
        w = _start(problem, w0)
        while True:
            r = s.query(w, 1)
            w = w - r.gradient / L

    return _run(problem, "gd", eps, budget, {"L": L}, body)


def agd(problem, w0=None, mode: str = "convex", eps=1e-8, budget=1000, L: Optional[float] = None,
        mu: Optional[float] = None, session: Optional[Session] = None, stop_gap: Optional[float] = None):
    """Nesterov's accelerated gradient method (one gradient call per iteration).

    ``mode="convex"`` uses the t_k momentum sequence, ``"strongly_convex"`` the
    constant momentum (sqrt(kappa)-1)/(sqrt(kappa)+1).
    """
    if mode not in ("convex", "strongly_convex"):
        raise InvalidInput("mode must be 'convex' or 'strongly_convex'")
    L = float(L or problem.mu1)
    mu = float(mu if mu is not None else (problem.lam or 0.0))
    if mode == "strongly_convex" and not mu > 0:
        raise InvalidInput("strongly convex mode needs mu > 0")
    beta = (math.sqrt(L / mu) - 1) / (math.sqrt(L / mu) + 1) if mode == "strongly_convex" else None

    def body(s):
        x = _start(problem, w0)
        y = x.copy()
        t = 1.0
        while True:
            r = s.query(y, 1)
            if stop_gap is not None and s.gap < stop_gap:
                return y
            xn = y - r.gradient / L
            if beta is None:
                tn = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
                y = xn + ((t - 1) / tn) * (xn - x)
                t = tn
            else:
                y = xn + beta * (xn - x)
            x = xn

    if session is not None:
        return body(session)
    return _run(problem, f"agd-{mode}", eps, budget, {"L": L, "mu": mu}, body)


# Second-order methods ---------------------------------------------------------------------------


def newton_linesearch(problem, w0=None, eps=1e-8, budget=1000, c1: float = 1e-4, shrink: float = 0.5) -> RunTrace:
    """Newton direction with Armijo backtracking; each trial value is one call."""

    def body(s):
        w = _start(problem, w0)
        r = s.query(w, 2)
        while True:
            try:
                d = hessian_solve(r.hessian, -r.gradient)
                if not np.all(np.isfinite(d)):
                    raise np.linalg.LinAlgError
            except (np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError):
                d = hessian_solve(r.hessian, -r.gradient, 1e-12)
            slope = float(r.gradient @ d)
            t = 1.0
            while True:
                wt = w + t * d
                rt = s.query(wt, 2 if t == 1.0 else 0)
                if rt.value <= r.value + c1 * t * slope:
                    break
                t *= shrink
                if t < 1e-20:
                    raise NumericalFailure("line search stalled")
            if t != 1.0:
                s.trace.mark("damped")
                rt = s.query(wt, 2)
            w, r = wt, rt

    return _run(problem, "newton-ls", eps, budget, {"c1": c1, "shrink": shrink}, body)


def cubic_newton(problem, w0=None, M: Optional[float] = None, eps=1e-8, budget=1000,
                 session: Optional[Session] = None) -> RunTrace:
    M = float(M or problem.mu2)

    def body(s):
        w = _start(problem, w0)
        while True:
            r = s.query(w, 2)
            w = w + cubic_subproblem_solve(CubicSubproblem(r.gradient, r.hessian, M))

    if session is not None:
        return body(session)
    return _run(problem, "cubic-newton", eps, budget, {"M": M}, body)


def anpe(problem, w0=None, eps=1e-8, budget=10_000, mu2: Optional[float] = None,
         sigma_l: float = 0.25, sigma_u: float = 0.5, inner_budget: int = 60,
         session: Optional[Session] = None, iterations: Optional[int] = None,
         stop_gap: Optional[float] = None):
    """Accelerated Newton proximal extragradient method (large-step variant).

    Iteration k picks a proximal parameter ``lam_k`` and
        a = (lam + sqrt(lam^2 + 4 lam A)) / 2
        xt = (A y + a x) / (A + a)
        y+ = xt - (H(xt) + I/lam)^{-1} grad(xt)
    accepting ``lam`` once ``sigma_l <= lam * mu2/2 * |y+ - xt| <= sigma_u``;
    the search over ``lam`` is warm-started and each trial costs one call.
    Then ``A += a`` and ``x -= a grad(y+)``.

    With ``session``/``iterations`` it runs a fixed number of iterations
    inside an existing session and returns the last ``y`` (used by restarts);
    ``stop_gap`` ends the run early, returning the best point seen, once the
    session's gap drops below it.
    """
    mu2 = float(mu2 or problem.mu2)
    if not 0 < sigma_l < sigma_u < 1:
        raise InvalidInput("need 0 < sigma_l < sigma_u < 1")
    state = {"lam": 1.0 / mu2, "growth": 1.0}

    def trial(s, x, y, A, lam):
        a = 0.5 * (lam + math.sqrt(lam * lam + 4 * lam * A))
        xt = (A * y + a * x) / (A + a)
        r = s.query(xt, 2)
        step = hessian_solve(r.hessian, -r.gradient, 1.0 / lam)
        return a, xt, xt + step, lam * mu2 / 2 * float(np.linalg.norm(step))

    def iterate(s, x, y, A):
        # warm start: repeat the last accepted growth of lam (capped at 4x)
        lam = state["lam"] * state["growth"]
        lo = hi = None  # (log lam, log q) brackets
        target = 0.5 * (math.log(sigma_l) + math.log(sigma_u))
        for _ in range(inner_budget):
            a, xt, yn, q = trial(s, x, y, A, lam)
            if sigma_l <= q <= sigma_u:
                break
            ll, lq = math.log(lam), math.log(max(q, 1e-300))
            if q < sigma_l:
                lo = (ll, lq)
            else:
                hi = (ll, lq)
            if lo is not None and hi is not None and hi[1] > lo[1]:
                # log-log secant inside the bracket, kept away from the ends
                t = (target - lo[1]) / (hi[1] - lo[1])
                t = min(max(t, 0.1), 0.9)
                ll = lo[0] + t * (hi[0] - lo[0])
            else:
                ll += min(max(target - lq, -math.log(16)), math.log(16))
            lam = math.exp(ll)
            if lam > 1e300:
                break
        else:
            raise NumericalFailure("large-step condition not met within the inner budget")
        state["growth"] = min(max(lam / state["lam"], 1.0), 4.0)
        state["lam"] = lam
        r = s.query(yn, 1)
        return x - a * r.gradient, yn, A + a

    def body(s):
        x = _start(problem, w0)
        y, A = x.copy(), 0.0
        k = 0
        while iterations is None or k < iterations:
            x, y, A = iterate(s, x, y, A)
            k += 1
            if stop_gap is not None and s.gap < stop_gap:
                return s.best[1].copy()
        return y

    if session is not None:
        return body(session)
    return _run(problem, "anpe", eps, budget, {"mu2": mu2, "sigma_l": sigma_l, "sigma_u": sigma_u}, body)


def epoch_length(mu2: float, D: float, lam: float, c_cal: float = 1.0) -> int:
    return max(1, math.ceil((4 * c_cal * mu2 * D / lam) ** (2.0 / 7.0)))


def switch_threshold(lam: float, mu2: float) -> float:
    """Gap below which cubic Newton converges quadratically."""
    return lam**3 / (4 * mu2**2)


def anpe_restart(problem, w0=None, eps=1e-8, budget=10_000, c_cal: float = 1.0, M: Optional[float] = None,
                 **anpe_kw) -> RunTrace:
    """A-NPE restarted every tau iterations, then cubic Newton past the threshold.

    ``trace.params['epochs']`` lists (gap at start, gap at end) per epoch.
    """
    mu2, lam, D = float(problem.mu2), float(problem.lam), float(problem.D)
    tau = epoch_length(mu2, D, lam, c_cal)
    thr = switch_threshold(lam, mu2)
    M = float(M or mu2)
    epochs = []

    def body(s):
        w = _start(problem, w0)
        r = s.query(w, 2)
        while s.gap >= thr:
            g0 = s.gap
            epochs.append([g0, None])
            y = anpe(problem, w, session=s, iterations=tau, mu2=mu2, stop_gap=thr, **anpe_kw)
            r = s.query(y, 2)
            epochs[-1][1] = s.trace.raw_gaps[-1]
            s.trace.mark("epoch_end")
            w = y
        s.trace.mark("switch")
        while True:
            w = w + cubic_subproblem_solve(CubicSubproblem(r.gradient, r.hessian, M))
            r = s.query(w, 2)

    params = {"tau": tau, "c_cal": c_cal, "threshold": thr, "epochs": epochs}
    return _run(problem, "anpe-restart", eps, budget, params, body)


def calibrate_c(problem_factory: Callable[[], object], c0: float = 1.0, max_doublings: int = 12, budget=20_000) -> float:
    """Double ``c_cal`` until every restart epoch halves the gap on a probe."""
    c = c0
    for _ in range(max_doublings):
        tr = anpe_restart(problem_factory(), c_cal=c, eps=0.0, budget=budget)
        ep = [e for e in tr.params["epochs"] if e[1] is not None]
        if ep and all(e1 <= e0 / 2 for e0, e1 in ep):
            return c
        c *= 2
    raise NumericalFailure("calibration did not reach the halving property")


def hybrid(problem, w0=None, eps=1e-8, budget=10_000, L: Optional[float] = None, M: Optional[float] = None) -> RunTrace:
    """Strongly convex AGD until the gap is below lam^3/(4 mu2^2), then cubic Newton."""
    lam, mu2 = float(problem.lam), float(problem.mu2)
    thr = switch_threshold(lam, mu2)
    L = float(L or problem.mu1)
    M = float(M or mu2)

    def body(s):
        w = _start(problem, w0)
        r = s.query(w, 2)
        if s.gap >= thr:
            w = agd(problem, w, "strongly_convex", L=L, mu=lam, session=s, stop_gap=thr)
            r = s.query(w, 2)
        s.trace.mark("switch")
        while True:
            w = w + cubic_subproblem_solve(CubicSubproblem(r.gradient, r.hessian, M))
            r = s.query(w, 2)

    return _run(problem, "hybrid", eps, budget, {"L": L, "M": M, "threshold": thr}, body)


# Simple test problems -------------------------------------------------------------------------------


class QuadraticProblem:
    """``f(w) = 1/2 w^T A w - b^T w`` with exact ``f_star``."""

    def __init__(self, A, b, lam: Optional[float] = None, mu2: float = 1.0, D: Optional[float] = None):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = len(self.b)
        ev = np.linalg.eigvalsh(self.A)
        self.mu1 = float(ev[-1])
        self.lam = float(ev[0]) if lam is None else lam
        self.mu2 = mu2
        self.w_star = np.linalg.lstsq(self.A, self.b, rcond=None)[0]
        self.f_star = float(-0.5 * self.b @ self.w_star)
        self.D = float(np.linalg.norm(self.w_star)) if D is None else D

    def oracle(self, w, order=2):
        g = self.A @ w - self.b
        return OracleReply(float(0.5 * w @ self.A @ w - self.b @ w), g, self.A if order >= 2 else None, order)


OPTIMIZERS = {
    "gd": gradient_descent,
    "agd": agd,
    "newton-ls": newton_linesearch,
    "cubic-newton": cubic_newton,
    "anpe": anpe,
    "anpe-restart": anpe_restart,
    "hybrid": hybrid,
}
