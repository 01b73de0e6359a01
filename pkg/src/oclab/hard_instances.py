"""Worst-case chain functions and their evaluation.

Three families share one shape. With chain coordinates ``y = V^T w``::

    f(w) = scale * ( sum_i g(<r_i, y>) - gamma * y_1 ) + lam/2 * |w|^2

where ``r_i = e_i - e_{i+1}`` for consecutive chain directions. The convex and
k-th order families add the endpoint terms ``r_0 = e_1`` and ``r_T = e_T``.
The strongly convex family has no endpoint terms but a positive ``lam``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .core import (
    Basis,
    ChainHessian,
    ConditionViolated,
    InvalidInput,
    OracleReply,
    as_point,
)


class Family(str, Enum):
    STRONGLY_CONVEX = "strong"
    CONVEX = "convex"
    KORDER = "korder"


class Regime(str, Enum):
    CUBIC = "Cubic"
    MIXED = "Mixed"
    QUADRATIC = "Quadratic"
    NA = "NA"


# Scalar generators ------------------------------------------------------------


@dataclass(frozen=True)
class SmoothedCubic:
    """``|x|^3/3`` on ``|x| <= delta``, continued by the tangent quadratic beyond."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidInput("delta must be positive")

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        a = np.abs(x)
        d = self.delta
        inner = a <= d
        if order == 0:
            return np.where(inner, a**3 / 3.0, d * x * x - d * d * a + d**3 / 3.0)
        if order == 1:
            return np.where(inner, x * a, 2.0 * d * x - d * d * np.sign(x))
        if order == 2:
            return 2.0 * np.minimum(d, a)
        if order == 3:
            return np.where(inner, 2.0 * np.sign(x), 0.0)
        if order >= 4:
            return np.zeros_like(x)
        raise InvalidInput(f"unsupported derivative order {order}")

    def bregman(self, a, b):
        """``g(a) - g(b) - g'(b)(a - b)`` without cancellation when ``a ~ b``."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        d = self.delta
        out = self(a) - self(b) - self(b, 1) * (a - b)  # fine unless a and b share a piece
        same = np.sign(a) * np.sign(b) >= 0
        aa, ab = np.abs(a), np.abs(b)
        ia, ib = aa <= d, ab <= d
        both_in = same & ia & ib
        out = np.where(both_in, (a - b) ** 2 * (aa + 2 * ab) / 3.0, out)
        out = np.where(same & ~ia & ~ib, d * (a - b) ** 2, out)
        # one point on each side of the knee: split at |x| = delta
        k1 = same & ~ia & ib
        out = np.where(k1, (d - ab) ** 2 * (d + 2 * ab) / 3.0 + (d * d - ab * ab) * (aa - d) + d * (aa - d) ** 2, out)
        k2 = same & ia & ~ib
        out = np.where(k2, (aa - d) ** 2 * (aa + 2 * d) / 3.0 + 2 * d * (ab - d) * (d - aa) + d * (d - ab) ** 2, out)
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class PowerFunction:
    """``|x|^(k+1) / (k+1)``; its first k derivatives vanish at the origin."""

    k: int

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        p = self.k + 1
        if order < 0:
            raise InvalidInput(f"unsupported derivative order {order}")
        if order > p:
            return np.zeros_like(x)
        # d^j/dx^j |x|^p / p = (p-1)!/(p-j)! |x|^(p-j) sign(x)^j
        coef = math.factorial(p - 1) / math.factorial(p - order)
        a = np.abs(x)
        out = coef * a ** (p - order) if order < p else np.full_like(x, coef)
        if order % 2:
            out = out * np.sign(x)
        return out

    def bregman(self, a, b):
        """``g(a) - g(b) - g'(b)(a - b)`` without cancellation when ``a ~ b``."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        p = self.k + 1
        out = self(a) - self(b) - self(b, 1) * (a - b)
        # |x|^p/p agrees with a polynomial on each half line (everywhere for even p)
        even = p % 2 == 0
        x, y = (a, b) if even else (np.abs(a), np.abs(b))
        poly = sum((j + 1) * y**j * x ** (p - 2 - j) for j in range(p - 1)) * (a - b) ** 2 / p
        ok = np.ones(a.shape, bool) if even else np.sign(a) * np.sign(b) >= 0
        return np.maximum(np.where(ok, poly, out), 0.0)


def g_eval(g, x: float, order: int = 0) -> float:
    if order not in (0, 1, 2):
        raise InvalidInput("order must be 0, 1 or 2")
    return float(g(x, order))


# Specification ----------------------------------------------------------------------


@dataclass(frozen=True)
class ChainSpec:
    """Complete description of one hard instance.

    ``T`` is the chain length for the convex and k-th order families. For the
    strongly convex family the chain has ``T_tilde`` links and ``T`` is the
    iteration horizon the parameters were chosen for. ``basis_seed`` pins the
    random orthonormal directions; an explicit ``basis`` (e.g. built by the
    adversary) overrides it.
    """

    family: Family
    k: int
    mu1: Optional[float]
    mu2_or_muk: float
    lam: float
    gamma: float
    delta: Optional[float]
    T: int
    T_tilde: Optional[int]
    dim: int
    scale: float
    basis_seed: int = 0
    D: Optional[float] = None
    regime: Optional[str] = None
    explicit_basis: Optional[Basis] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.gamma <= 0 or self.scale <= 0 or self.mu2_or_muk <= 0:
            raise InvalidInput("gamma, scale and mu2/muk must be positive")
        if self.lam < 0:
            raise InvalidInput("lambda must be nonnegative")
        if self.T < 1 or self.k < 1:
            raise InvalidInput("T and k must be at least 1")
        if self.family is not Family.KORDER and not (self.delta and self.delta > 0):
            raise InvalidInput("delta must be positive")
        if self.family is Family.STRONGLY_CONVEX:
            if self.T_tilde is None or self.T_tilde < 2:
                raise InvalidInput("strongly convex specs need T_tilde >= 2")
            if self.lam <= 0:
                raise InvalidInput("strongly convex specs need lambda > 0")
        if self.dim < self.n_chain:
            raise InvalidInput(f"dimension {self.dim} is below the chain length {self.n_chain}")
        if self.explicit_basis is not None and (
            self.explicit_basis.count != self.n_chain or self.explicit_basis.dim != self.dim
        ):
            raise InvalidInput("explicit basis does not match the chain length/dimension")

    @property
    def n_chain(self) -> int:
        return self.T_tilde if self.family is Family.STRONGLY_CONVEX else self.T

    @property
    def endpoints(self) -> bool:
        return self.family is not Family.STRONGLY_CONVEX

    @property
    def lam_tilde(self) -> float:
        """Regularization weight of the unscaled chain objective, ``lam / scale``."""
        return self.lam / self.scale

    @cached_property
    def g(self):
        if self.family is Family.KORDER:
            return PowerFunction(self.k)
        return SmoothedCubic(self.delta)

    @cached_property
    def basis(self) -> Basis:
        if self.explicit_basis is not None:
            return self.explicit_basis
        return Basis.random(self.dim, self.n_chain, self.basis_seed)

    def with_chain_length(self, n: int) -> "ChainSpec":
        """Same parameters (including gamma) on a chain of length ``n``."""
        if self.family is Family.STRONGLY_CONVEX:
            return replace(self, T_tilde=n, dim=max(self.dim, n), explicit_basis=None)
        return replace(self, T=n, dim=max(self.dim, 2 * n), explicit_basis=None)

    def check_invariants(self) -> None:
        """Raise ConditionViolated if the construction's size requirements fail."""
        if self.family is Family.STRONGLY_CONVEX:
            need = minimal_T_tilde(self.gamma, self.mu2_or_muk, self.lam, self.T)
            if self.T_tilde < need:
                raise ConditionViolated(f"T_tilde={self.T_tilde} < {need}", "T_tilde")
            if self.dim < 2 * self.T_tilde:
                raise ConditionViolated("dimension below 2*T_tilde", "dim")
        elif self.dim < 2 * self.T:
            raise ConditionViolated("dimension below 2*T", "dim")

    # serialization

    def to_dict(self) -> dict:
        d = asdict(replace(self, explicit_basis=None))
        d.pop("explicit_basis")
        d["family"] = self.family.value
        d["basis"] = {
            "seed": self.basis_seed,
            "dim": self.dim,
            "count": self.n_chain,
            "adaptive": self.explicit_basis is not None,
        }
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainSpec":
        d = dict(d)
        d.pop("basis", None)
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "ChainSpec":
        return cls.from_dict(json.loads(s))


# Builders ----------------------------------------------------------------------------


def minimal_T_tilde(gamma: float, mu2: float, lam: float, T: int) -> int:
    ratio = mu2 / (6.0 * lam)
    bound = max(4.0 * gamma * ratio**2 + 1.0, 2.0 * T, gamma * ratio + 1.0)
    n = math.ceil(bound - 1e-9)
    return max(n, 2)


def strongly_convex_gamma(mu1: float, mu2: float, lam: float, D: float) -> float:
    first = (3.0 * (mu1 - lam) / (2.0 * mu2)) ** 2
    log_second = (8 * math.log(D) + 6 * math.log(12 * lam) - 4 * math.log(2) - 6 * math.log(mu2)) / 7
    return min(first, math.exp(log_second))


def build_strongly_convex(mu1, mu2, lam, D, T, seed: int = 0) -> ChainSpec:
    if min(mu1, mu2, lam, D) <= 0 or T < 1:
        raise InvalidInput("all parameters must be positive")
    if mu1 / lam < 68:
        raise ConditionViolated(f"mu1/lambda = {mu1 / lam:g} < 68", "mu1/lambda >= 68")
    if mu2 * D / lam < 694:
        raise ConditionViolated(f"mu2*D/lambda = {mu2 * D / lam:g} < 694", "mu2*D/lambda >= 694")
    gamma = strongly_convex_gamma(mu1, mu2, lam, D)
    if gamma < 1e4 * (lam / mu2) ** 2 * (1 - 1e-12):
        raise ConditionViolated("gamma below 1e4 (lambda/mu2)^2", "gamma >= 1e4 (lambda/mu2)^2")
    T_tilde = minimal_T_tilde(gamma, mu2, lam, T)
    return ChainSpec(
        family=Family.STRONGLY_CONVEX,
        k=2,
        mu1=float(mu1),
        mu2_or_muk=float(mu2),
        lam=float(lam),
        gamma=gamma,
        delta=math.sqrt(gamma),
        T=int(T),
        T_tilde=T_tilde,
        dim=2 * T_tilde,
        scale=mu2 / 12.0,
        basis_seed=seed,
        D=float(D),
        regime=Regime.NA.value,
    )


def convex_regime_discriminant(mu1, mu2, D, T) -> float:
    delta = 1.5 * mu1 / mu2
    return D * D / (48.0 * delta * delta * T**3)


def build_convex(mu1, mu2, D, T, seed: int = 0) -> ChainSpec:
    if min(mu1, mu2, D) <= 0 or T < 1:
        raise InvalidInput("all parameters must be positive")
    delta = 1.5 * mu1 / mu2
    r = convex_regime_discriminant(mu1, mu2, D, T)
    if r <= 1.0 / T**2:
        gamma, regime = D * D / (48.0 * T), Regime.CUBIC
    elif r <= 1.0:
        gamma, regime = D * delta / math.sqrt(12.0 * T), Regime.MIXED
    else:
        gamma, regime = D * delta / math.sqrt(3.0 * T), Regime.QUADRATIC
    return ChainSpec(
        family=Family.CONVEX,
        k=2,
        mu1=float(mu1),
        mu2_or_muk=float(mu2),
        lam=0.0,
        gamma=gamma,
        delta=delta,
        T=int(T),
        T_tilde=None,
        dim=2 * T,
        scale=mu2 / 12.0,
        basis_seed=seed,
        D=float(D),
        regime=regime.value,
    )


def korder_gamma(k: int, D: float, T: int) -> float:
    return 3 ** (k / 2) * D**k * (1 + (2 * T) ** k) / (1 + 2 * T) ** (1.5 * k)


def korder_scale(k: int, muk: float) -> float:
    return muk / (math.factorial(k) * 2 ** ((k + 3) / 2))


def build_korder(k, muk, D, T, seed: int = 0) -> ChainSpec:
    if k < 1 or muk <= 0 or D <= 0 or T < 1:
        raise InvalidInput("need k >= 1, muk > 0, D > 0, T >= 1")
    return ChainSpec(
        family=Family.KORDER,
        k=int(k),
        mu1=None,
        mu2_or_muk=float(muk),
        lam=0.0,
        gamma=korder_gamma(k, D, T),
        delta=None,
        T=int(T),
        T_tilde=None,
        dim=2 * T,
        scale=korder_scale(k, muk),
        basis_seed=seed,
        D=float(D),
        regime=Regime.NA.value,
    )


# Chain-coordinate evaluation -------------------------------------------------------------


def _ends(spec, head, tail):
    return (spec.endpoints if head is None else head, spec.endpoints if tail is None else tail)


def chain_value(spec: ChainSpec, y: np.ndarray, head=None, tail=None) -> float:
    """``(f - lam/2 |w|^2) / scale`` at chain coordinates ``y`` (no regularizer).

    ``head``/``tail`` switch the endpoint terms ``g(y_1)`` and ``g(y_m)``; by
    default they follow the family.
    """
    head, tail = _ends(spec, head, tail)
    g = spec.g
    total = float(np.sum(g(y[:-1] - y[1:], 0))) if len(y) > 1 else 0.0
    if head:
        total += float(g(y[0], 0))
    if tail:
        total += float(g(y[-1], 0))
    return total - spec.gamma * float(y[0])


def chain_gradient(spec: ChainSpec, y: np.ndarray, head=None, tail=None) -> np.ndarray:
    head, tail = _ends(spec, head, tail)
    g = spec.g
    out = np.zeros_like(y)
    if len(y) > 1:
        gd = g(y[:-1] - y[1:], 1)
        out[:-1] += gd
        out[1:] -= gd
    if head:
        out[0] += g(y[0], 1)
    if tail:
        out[-1] += g(y[-1], 1)
    out[0] -= spec.gamma
    return out


def chain_hessian_bands(spec: ChainSpec, y: np.ndarray, head=None, tail=None):
    """Main and first off-diagonal of the (unscaled, unregularized) chain Hessian."""
    head, tail = _ends(spec, head, tail)
    g = spec.g
    diag = np.zeros_like(y)
    off = np.zeros(max(len(y) - 1, 0))
    if len(y) > 1:
        hd = g(y[:-1] - y[1:], 2)
        diag[:-1] += hd
        diag[1:] += hd
        off = -hd
    if head:
        diag[0] += g(y[0], 2)
    if tail:
        diag[-1] += g(y[-1], 2)
    return diag, off


def _term_rows(spec: ChainSpec, a: np.ndarray) -> np.ndarray:
    """``<r_i, a>`` for every term direction, given chain coordinates ``a``."""
    parts = []
    if spec.endpoints:
        parts.append(a[:1])
    parts.append(a[:-1] - a[1:])
    if spec.endpoints:
        parts.append(a[-1:])
    return np.concatenate(parts)


def _active_prefix(*arrays) -> int:
    """Length of the leading block outside of which all arrays are zero."""
    n = 0
    for arr in arrays:
        nz = np.flatnonzero(arr)
        if nz.size:
            n = max(n, int(nz[-1]) + 1)
    return n


def evaluate_chain(spec: ChainSpec, y, order: int = 2, window: Optional[int] = None) -> OracleReply:
    """Oracle reply in chain coordinates (the function restricted to span(V)).

    With ``window`` the chain is cut after ``window`` links. The broken link
    ``g(y_n - 0)`` acts as a tail endpoint, so the result equals the full
    function on points supported in the first ``window`` coordinates.
    """
    if order not in (0, 1, 2):
        raise InvalidInput("order must be 0, 1 or 2")
    n = spec.n_chain if window is None else min(window, spec.n_chain)
    y = as_point(y, n)
    head, tail = spec.endpoints, spec.endpoints or n < spec.n_chain
    s, lam = spec.scale, spec.lam
    value = s * chain_value(spec, y, head, tail) + 0.5 * lam * float(y @ y)
    grad = s * chain_gradient(spec, y, head, tail) + lam * y if order >= 1 else np.zeros(n)
    hess = None
    if order >= 2:
        diag, off = chain_hessian_bands(spec, y, head, tail)
        hess = ChainHessian(s * diag, s * off, lam, None, n)
    return OracleReply(value, grad, hess, order)


def reply_from_chain(spec: ChainSpec, w: np.ndarray, y: np.ndarray, V: np.ndarray, order: int = 2) -> OracleReply:
    """Assemble the oracle reply at ``w`` given its chain coordinates ``y``.

    Only the leading chain directions that carry gradient or curvature enter
    the reply, so ``V`` may hold just those columns (the adversary passes the
    directions revealed so far).
    """
    s, lam = spec.scale, spec.lam
    value = s * chain_value(spec, y) + 0.5 * lam * float(w @ w)
    if order == 0:
        return OracleReply(value, np.zeros_like(w), None, 0)
    cg = s * chain_gradient(spec, y)
    if order >= 2:
        diag, off = chain_hessian_bands(spec, y)
        diag, off = s * diag, s * off
        m = max(_active_prefix(cg, diag, np.append(off, 0.0)), 1)
    else:
        m = max(_active_prefix(cg), 1)
    if m > V.shape[1]:
        raise InvalidInput(f"reply needs {m} chain directions, only {V.shape[1]} given")
    Vm = V[:, :m]
    grad = Vm @ cg[:m] + lam * w
    hess = None
    if order >= 2:
        hess = ChainHessian(diag[:m].copy(), off[: m - 1].copy(), lam, Vm, V.shape[0])
    return OracleReply(value, grad, hess, order)


def evaluate(spec: ChainSpec, w, order: int = 2, basis: Optional[np.ndarray] = None) -> OracleReply:
    """Exact value, gradient and Hessian at an ambient point.

    The Hessian comes back as a :class:`ChainHessian` restricted to the chain
    directions that actually carry curvature; call ``.dense()`` to materialize.
    ``basis`` optionally overrides the (dim, m) matrix of chain directions.
    """
    if order not in (0, 1, 2):
        raise InvalidInput("order must be 0, 1 or 2")
    V = spec.basis.matrix if basis is None else basis
    w = as_point(w, V.shape[0])
    return reply_from_chain(spec, w, V.T @ w, V, order)


def derivative_form(spec: ChainSpec, w, dirs: Sequence, basis: Optional[np.ndarray] = None) -> float:
    """Derivative tensor of order ``len(dirs)`` applied to ``dirs``.

    Orders >= 3 use ``scale * sum_i g^(j)(<r_i, y>) prod_l <r_i, u_l>``; order 2
    additionally carries the ``lam * <u_1, u_2>`` term.
    """
    V = spec.basis.matrix if basis is None else basis
    w = as_point(w, V.shape[0])
    j = len(dirs)
    if j < 1:
        raise InvalidInput("need at least one direction")
    y = V.T @ w
    s_terms = _term_rows(spec, y)
    coef = spec.g(s_terms, j)
    prod = np.ones_like(coef)
    for u in dirs:
        prod = prod * _term_rows(spec, V.T @ as_point(u, V.shape[0]))
    out = spec.scale * float(np.sum(coef * prod))
    if j == 1:
        out -= spec.scale * spec.gamma * float((V.T @ np.asarray(dirs[0]))[0])
        out += spec.lam * float(w @ dirs[0])
    elif j == 2:
        out += spec.lam * float(np.dot(dirs[0], dirs[1]))
    return out


def kth_form(spec: ChainSpec, w, dirs: Sequence, basis: Optional[np.ndarray] = None) -> float:
    """k-th derivative tensor of a k-th order instance applied to ``k`` directions."""
    if spec.family is not Family.KORDER:
        raise InvalidInput("kth_form is defined for the k-th order family")
    if len(dirs) != spec.k:
        raise InvalidInput(f"expected {spec.k} directions, got {len(dirs)}")
    return derivative_form(spec, w, dirs, basis)


def term_matrix(spec: ChainSpec) -> np.ndarray:
    """Rows are the term directions ``r_i`` in chain coordinates."""
    n = spec.n_chain
    eye = np.eye(n)
    R = eye[:-1] - eye[1:]
    if spec.endpoints:
        R = np.vstack([eye[:1], R, eye[-1:]])
    return R.reshape(-1, n)


def term_gram_norm(spec: ChainSpec) -> float:
    """Operator norm of ``sum_i r_i r_i^T`` assembled explicitly."""
    R = term_matrix(spec)
    if not R.size:
        return 0.0
    G = R.T @ R
    d, o = np.diag(G).copy(), np.diag(G, 1).copy()
    if len(d) < 3 or not np.any(np.triu(G, 2)):
        # tridiagonal, as the chain structure guarantees
        if len(d) == 1:
            return float(abs(d[0]))
        ev = linalg.eigvalsh_tridiagonal(d, o)
        return float(np.max(np.abs(ev)))
    return float(np.linalg.norm(G, 2))


def gradient_lipschitz_bound(spec: ChainSpec) -> float:
    """Analytic gradient Lipschitz constant (``2 mu2 Delta / 3 + lam``)."""
    if spec.family is Family.KORDER:
        return math.inf if spec.k > 1 else 4.0 * spec.scale
    return 2.0 * spec.mu2_or_muk * spec.delta / 3.0 + spec.lam


class HardInstance:
    """Oracle access to a chain spec, either in chain or in ambient coordinates.

    Orthogonal changes of variables do not affect any of the optimizers here,
    so benchmarks run in chain coordinates (``coords="chain"``), optionally on a
    window of the first ``window`` links. ``oracle`` is the single entry point
    the optimizers use; each call is one oracle query.
    """

    def __init__(self, spec: ChainSpec, coords: str = "chain", window: Optional[int] = None):
        if coords not in ("chain", "ambient"):
            raise InvalidInput("coords must be 'chain' or 'ambient'")
        if window is not None and coords != "chain":
            raise InvalidInput("windows are only supported in chain coordinates")
        self.spec = spec
        self.coords = coords
        self.window = None if window is None or window >= spec.n_chain else int(window)
        if coords == "chain":
            self.dim = spec.n_chain if self.window is None else self.window
        else:
            self.dim = spec.dim

    @property
    def mu1(self):
        return self.spec.mu1

    @property
    def mu2(self):
        return self.spec.mu2_or_muk

    @property
    def lam(self):
        return self.spec.lam

    @property
    def D(self):
        return self.spec.D

    def oracle(self, w, order: int = 2) -> OracleReply:
        if self.coords == "chain":
            return evaluate_chain(self.spec, w, order, self.window)
        return evaluate(self.spec, w, order)

    def value(self, w) -> float:
        return self.oracle(w, 0).value

    @cached_property
    def solution(self):
        from .minimizers import solve

        return solve(self.spec)

    @property
    def f_star(self) -> float:
        return self.solution.f_star

    def suboptimality(self, w) -> float:
        """``f(w) - f*`` from Bregman divergences of the terms around ``w*``.

        Unlike ``value(w) - f_star`` this keeps full relative accuracy near
        the minimizer, which the doubly-exponential phases need.
        """
        if self.window is not None:
            return max(self.value(w) - self.f_star, 0.0)
        spec = self.spec
        w = np.asarray(w, dtype=float)
        ys = self.solution.chain_coords
        if self.coords == "chain":
            y, perp = as_point(w, self.dim), 0.0
        else:
            y = self.spec.basis.matrix.T @ w
            perp = max(float(w @ w) - float(y @ y), 0.0)
        ra, rb = _term_rows(spec, y), _term_rows(spec, ys)
        dy = y - ys
        total = spec.scale * float(np.sum(spec.g.bregman(ra, rb))) + 0.5 * spec.lam * (float(dy @ dy) + perp)
        # the first-order term only carries the minimizer's KKT residual
        return max(total + float(self._grad_star @ dy), 0.0)

    @cached_property
    def _grad_star(self) -> np.ndarray:
        return evaluate_chain(self.spec, self.solution.chain_coords, 1).gradient

    @property
    def w_star(self) -> np.ndarray:
        y = self.solution.chain_coords
        if self.coords == "ambient":
            return self.spec.basis.matrix @ y
        return y[: self.dim].copy()
