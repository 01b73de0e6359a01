"""Minimizers of the chain instances.

Everything works on the unscaled chain objective ``fhat = f / scale`` in chain
coordinates; ``f_star`` is reported for the rotated instance (``scale * fhat``).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_banded, solveh_banded

from .core import InvalidInput, NumericalFailure
from .hard_instances import (
    ChainSpec,
    Family,
    Regime,
    chain_gradient,
    chain_hessian_bands,
    chain_value,
)


@dataclass
class MinimizerSolution:
    chain_coords: np.ndarray
    f_star: float
    delta: float
    regime: str
    kkt_residual: float
    f_hat: float = 0.0
    norm_bound: Optional[float] = None
    iterations: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chain_coords"] = [float(x) for x in self.chain_coords]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# unscaled chain objective: fhat(y) = sum g + endpoints - gamma*y1 + lam_tilde/2 |y|^2


def _tail_flag(spec, y):
    # a chain cut short of its full length ends in a broken link g(y_n - 0)
    return True if len(y) < spec.n_chain else None


def fhat_value(spec: ChainSpec, y) -> float:
    return chain_value(spec, y, tail=_tail_flag(spec, y)) + 0.5 * spec.lam_tilde * float(y @ y)


def fhat_gradient(spec: ChainSpec, y) -> np.ndarray:
    return chain_gradient(spec, y, tail=_tail_flag(spec, y)) + spec.lam_tilde * y


def _kkt(spec, y) -> float:
    return float(np.linalg.norm(fhat_gradient(spec, y)))


# Convex family ------------------------------------------------------------------------


def convex_regime(gamma: float, delta: float, T: int) -> Regime:
    """Regime of the chain minimizer, from the (half-open) gamma thresholds."""
    if gamma <= delta**2 * (1 + T**2) / T**2:
        return Regime.CUBIC
    if gamma <= 2 * delta**2 * T:
        return Regime.MIXED
    return Regime.QUADRATIC


def convex_formulas(gamma: float, Dl: float, T: int, regime: Regime):
    """(delta, fhat*, squared-norm bound) of the convex chain in a given regime."""
    if regime is Regime.CUBIC:
        d = math.sqrt(gamma / (1 + T**2))
        f = -(2.0 / 3.0) * gamma**1.5 * T / math.sqrt(1 + T**2)
        nb = gamma * (1 + T) ** 3 / (3 * (1 + T**2))
    elif regime is Regime.MIXED:
        # -DT + DT sqrt(1+x), written to avoid cancellation when x is small
        x = (gamma + Dl**2) / (Dl**2 * T**2)
        d = Dl * T * x / (1 + math.sqrt(1 + x))
        f = (T / 3) * d**3 + Dl * T**2 * d**2 - T * (Dl**2 + gamma) * d + Dl**3 / 3
        nb = (gamma + Dl**2) ** 2 * (T + 1) ** 3 / (12 * Dl**2 * T**2)
    else:
        d = (gamma + 2 * Dl**2) / (2 * Dl * (T + 1))
        f = -T * (gamma + 2 * Dl**2) ** 2 / (4 * Dl * (T + 1)) + (T + 1) * Dl**3 / 3
        nb = (T + 1) * (gamma + 2 * Dl**2) ** 2 / (12 * Dl**2)
    return d, f, nb


def solve_convex_closed_form(spec: ChainSpec) -> MinimizerSolution:
    if spec.family is not Family.CONVEX:
        raise InvalidInput("closed form applies to the convex family")
    T, gamma, Dl = spec.T, spec.gamma, spec.delta
    regime = convex_regime(gamma, Dl, T)
    d, f, nb = convex_formulas(gamma, Dl, T, regime)
    y = d * np.arange(T, 0, -1, dtype=float)
    return MinimizerSolution(y, spec.scale * f, d, regime.value, _kkt(spec, y), f, nb)


# k-th order family ---------------------------------------------------------------------


def korder_closed_form(spec: ChainSpec) -> MinimizerSolution:
    if spec.family is not Family.KORDER:
        raise InvalidInput("closed form applies to the k-th order family")
    k, T, gamma = spec.k, spec.T, spec.gamma
    d = (gamma / (T**k + 1)) ** (1.0 / k)
    f = -k * T * gamma ** ((k + 1) / k) / ((k + 1) * (T**k + 1) ** (1.0 / k))
    nb = (gamma / (T**k + 1)) ** (2.0 / k) * (1 + T) ** 3 / 3.0
    y = d * np.arange(T, 0, -1, dtype=float)
    return MinimizerSolution(y, spec.scale * f, d, Regime.NA.value, _kkt(spec, y), f, nb)


# Strongly convex family ------------------------------------------------------------------


def _g1_inverse(v: float, Dl: float) -> float:
    """Inverse of g' on [0, inf) for the smoothed cubic."""
    if v <= Dl * Dl:
        return math.sqrt(v)
    return (v + Dl * Dl) / (2 * Dl)


def _forward(spec: ChainSpec, w1: float, clip: bool = False):
    """Run the forward recursion from ``w1``.

    Returns (coords, verdict) where verdict is +1 when ``w1`` is too large,
    -1 when too small. With ``clip`` the trajectory is continued through
    negative radicands/iterates by clamping at 0.
    """
    n, gamma, lt, Dl = spec.T_tilde, spec.gamma, spec.lam_tilde, spec.delta
    w = np.zeros(n)
    w[0] = w1
    S = w1
    for t in range(n - 1):
        R = gamma - lt * S
        if R < 0:
            if not clip:
                return w, +1
            R = 0.0
        nxt = w[t] - _g1_inverse(R, Dl)
        if nxt < 0:
            if not clip:
                return w, -1
            nxt = 0.0
        w[t + 1] = nxt
        S += nxt
    return w, (+1 if S > gamma / lt else -1)


def shooting_bracket(spec: ChainSpec):
    gamma, lt = spec.gamma, spec.lam_tilde
    # g'(w1 - w2) <= w1^2, so w1^2 + lt*w1 >= gamma
    lo = (-lt + math.sqrt(lt * lt + 4 * gamma)) / 2
    lo = min(lo, math.sqrt(gamma) / 2)
    hi = math.sqrt(gamma) + math.sqrt(2 * gamma**1.5 / lt)
    if _forward(spec, hi)[1] < 0:
        hi = gamma / lt  # w1 never exceeds the total sum
    return lo, hi


def solve_strongly_convex_shooting(spec: ChainSpec, max_bisect: int = 200) -> MinimizerSolution:
    if spec.family is not Family.STRONGLY_CONVEX:
        raise InvalidInput("shooting applies to the strongly convex family")
    if not spec.lam_tilde > 0 or not math.isfinite(spec.lam_tilde):
        raise InvalidInput("lambda_tilde must be positive")
    lo, hi = shooting_bracket(spec)
    if _forward(spec, lo)[1] > 0 or _forward(spec, hi)[1] < 0:
        raise NumericalFailure("shooting bracket does not enclose the root")
    tol = 1e-12 * spec.gamma / spec.lam_tilde
    for i in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _forward(spec, mid)[1] > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * 1e-4:
            break
    else:
        raise NumericalFailure("bisection did not converge")
    y0, _ = _forward(spec, 0.5 * (lo + hi), clip=True)
    # forward recursion loses relative accuracy in the fast-decaying tail:
    # re-seed the tail from the local balance w_{t+1} ~ w_t^2 / lt, then polish
    y0 = _reseed_tail(spec, y0)
    y, it = _newton(spec, y0, tol=1e-13 * max(1.0, spec.gamma), polish=3)
    f = fhat_value(spec, y)
    if abs(y.sum() - spec.gamma / spec.lam_tilde) > 1e-8 * spec.gamma / spec.lam_tilde:
        raise NumericalFailure("terminal sum condition not met after polishing")
    return MinimizerSolution(y, spec.scale * f, float("nan"), Regime.NA.value, _kkt(spec, y), f, None, it)


def _reseed_tail(spec, y):
    y = y.copy()
    lt = spec.lam_tilde
    scale = y[0]
    for t in range(1, len(y)):
        if y[t] <= 1e-6 * scale:
            for s in range(t, len(y)):
                y[s] = y[s - 1] ** 2 / lt if y[s - 1] > 0 else 0.0
            break
    return y


# Generic solver ------------------------------------------------------------------------------


def _solve_tridiag(diag, off, rhs):
    n = len(diag)
    if n == 1:
        return rhs / diag
    ab = np.zeros((2, n))
    ab[0, 1:] = off
    ab[1] = diag
    try:
        return solveh_banded(ab, rhs)
    except np.linalg.LinAlgError:
        full = np.zeros((3, n))
        full[0, 1:] = off
        full[1] = diag
        full[2, :-1] = off
        return solve_banded((1, 1), full, rhs)


def _newton(spec, y, tol, max_iter=10_000, polish=0):
    """Regularized Newton on fhat with adaptive (Levenberg-Marquardt) damping.

    The shift starts at ``sqrt(|grad|)``, which keeps steps bounded where the
    chain Hessian is singular (e.g. at the origin), and shrinks after every
    accepted step so the local rate becomes that of pure Newton. Rejected
    steps (Armijo, c = 1e-4) raise the shift instead.
    """
    lt = spec.lam_tilde
    f = fhat_value(spec, y)
    g = fhat_gradient(spec, y)
    gn = float(np.linalg.norm(g))
    mu = math.sqrt(gn)
    extra = 0
    step = math.inf
    for it in range(1, max_iter + 1):
        # small gradients do not imply accurate coordinates when the
        # Hessian is tiny (high-order family), so also wait for tiny steps
        if gn <= tol and (step <= 1e-13 * (1 + float(np.max(np.abs(y)))) or extra >= polish + 20):
            if extra >= polish:
                return y, it - 1
        if gn <= tol:
            extra += 1
        diag, off = chain_hessian_bands(spec, y, tail=_tail_flag(spec, y))
        diag = diag + lt
        for _ in range(200):
            try:
                p = _solve_tridiag(diag + mu, off, -g)
            except np.linalg.LinAlgError:
                mu = max(4 * mu, 1e-300)
                continue
            yn = y + p
            fn = fhat_value(spec, yn)
            if np.isfinite(fn) and fn <= f + 1e-4 * float(g @ p) + 4 * np.finfo(float).eps * abs(f):
                break
            mu = max(4 * mu, 1e-16 * (1 + gn))
        else:
            raise NumericalFailure("damping failed in Newton solver")
        mu *= 0.25
        step = float(np.max(np.abs(p)))
        y, f = yn, fn
        g = fhat_gradient(spec, y)
        gn = float(np.linalg.norm(g))
    raise NumericalFailure(f"Newton solver did not converge in {max_iter} iterations")


def solve_generic(spec: ChainSpec, y0=None, window: Optional[int] = None) -> MinimizerSolution:
    """Damped Newton on the chain objective; independent of the closed forms.

    With ``window`` the objective is restricted to the first ``window`` chain
    coordinates (all later ones pinned at zero).
    """
    n = spec.n_chain if window is None else min(int(window), spec.n_chain)
    if n == 0:
        return MinimizerSolution(np.zeros(0), 0.0, float("nan"), Regime.NA.value, 0.0, 0.0)
    if n > 4096:
        raise InvalidInput("generic solver supports chains of length <= 4096")
    y = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float).copy()
    y, it = _newton(spec, y, tol=1e-10 * max(1.0, spec.gamma), polish=2)
    f = fhat_value(spec, y)
    return MinimizerSolution(y, spec.scale * f, float("nan"), Regime.NA.value, _kkt(spec, y), f, None, it)


def solve(spec: ChainSpec) -> MinimizerSolution:
    if spec.family is Family.CONVEX:
        return solve_convex_closed_form(spec)
    if spec.family is Family.KORDER:
        return korder_closed_form(spec)
    return solve_strongly_convex_shooting(spec)


def min_chain_value(spec: ChainSpec) -> float:
    """Minimal value of the rotated instance."""
    return solve(spec).f_star


# Property report ----------------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    note: str = ""


@dataclass
class PropertyReport:
    family: str
    hypotheses_hold: bool
    checks: List[Check] = field(default_factory=list)
    witness_t0: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        lines = [f"{'check':<28}{'lhs':>14}{'rhs':>14}{'margin':>14}  ok"]
        for c in self.checks:
            lines.append(f"{c.name:<28}{c.lhs:>14.6g}{c.rhs:>14.6g}{c.margin:>14.6g}  {'yes' if c.passed else 'NO'}")
        return "\n".join(lines)


def _tail_witness(y, lt):
    """Smallest t0 <= n/2 (1-based) with y[t0+k] >= 9 lt 18^(-2^k) for all k.

    Compared in log space. Where both sides fall below the smallest
    representable double the comparison is skipped. Returns (t0, margin).
    """
    n = len(y)
    logmin = math.log(np.nextafter(0, 1))
    best = None
    for t0 in range(1, n // 2 + 1):
        margin = math.inf
        ok = True
        for k in range(0, n - t0 + 1):
            log_rhs = math.log(9 * lt) - (2.0**k) * math.log(18) if k < 1024 else -math.inf
            w = y[t0 - 1 + k]
            if w > 0:
                m = math.log(w) - log_rhs
            elif log_rhs < logmin:
                continue
            else:
                m = -math.inf
            margin = min(margin, m)
            if m < 0:
                ok = False
                break
            if log_rhs < logmin and w <= 0:
                break
        if ok:
            best = (t0, margin)
            break
    return best


def property_report(spec: ChainSpec, sol: MinimizerSolution) -> PropertyReport:
    y = np.asarray(sol.chain_coords, dtype=float)
    if spec.family is Family.STRONGLY_CONVEX:
        lt = spec.lam_tilde
        if not (lt > 0 and math.isfinite(lt)):
            raise InvalidInput("lambda_tilde must be positive")
        gamma = spec.gamma
        hyp = gamma >= 1e4 * (spec.lam / spec.mu2_or_muk) ** 2 * (1 - 1e-12) and spec.delta >= math.sqrt(gamma) * (1 - 1e-12)
        rep = PropertyReport(spec.family.value, hyp)
        s, target = float(y.sum()), gamma / lt
        rel = abs(s - target) / target
        rep.checks.append(Check("sum = gamma/lam_tilde", s, target, 1e-8 - rel, rel <= 1e-8))
        dec = float(np.min(y[:-1] - y[1:])) if len(y) > 1 else 0.0
        rep.checks.append(Check("nonincreasing", dec, 0.0, dec, dec >= 0))
        rep.checks.append(Check("nonnegative", float(y.min()), 0.0, float(y.min()), y.min() >= 0))
        t = np.arange(1, len(y) + 1)
        floor = np.maximum(0.0, gamma**0.75 / (7 * math.sqrt(lt)) + math.sqrt(gamma) * (0.5 - t))
        m1 = float(np.min(y - floor))
        rep.checks.append(Check("linear-decay floor", float(y[int(np.argmin(y - floor))]), float(floor[int(np.argmin(y - floor))]), m1, m1 >= 0))
        wit = _tail_witness(y, lt)
        if wit is None:
            rep.checks.append(Check("doubly-exponential tail", 0.0, 0.0, -math.inf, False, "no witness t0"))
        else:
            rep.witness_t0 = wit[0]
            rep.checks.append(Check("doubly-exponential tail", float(wit[0]), len(y) / 2, wit[1], True, f"t0={wit[0]} (log margin)"))
        nrm2 = float(y @ y)
        bound = 2 * gamma**1.75 / lt**1.5
        rep.checks.append(Check("norm bound", nrm2, bound, bound - nrm2, nrm2 <= bound))
        return rep

    rep = PropertyReport(spec.family.value, True)
    nrm2 = float(y @ y)
    if spec.family is Family.CONVEX:
        regime = Regime(convex_regime(spec.gamma, spec.delta, spec.T))
        nb = convex_formulas(spec.gamma, spec.delta, spec.T, regime)[2]
        label = f"norm bound ({regime.value})"
    else:
        nb = (spec.gamma / (spec.T**spec.k + 1)) ** (2.0 / spec.k) * (1 + spec.T) ** 3 / 3.0
        label = "norm bound"
    rep.checks.append(Check(label, nrm2, nb, nb - nrm2, nrm2 <= nb * (1 + 1e-12)))
    dec = float(np.min(y[:-1] - y[1:])) if len(y) > 1 else float(y[0])
    rep.checks.append(Check("nonincreasing", dec, 0.0, dec, dec >= -1e-12))
    if spec.D is not None:
        y2 = solve(spec.with_chain_length(2 * spec.T)).chain_coords
        n2 = float(np.linalg.norm(y2))
        rep.checks.append(Check("|w*_2T| <= D", n2, spec.D, spec.D - n2, n2 <= spec.D * (1 + 1e-12)))
    return rep
