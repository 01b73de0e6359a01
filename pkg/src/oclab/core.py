"""Shared types: errors, orthonormal bases, oracle replies and chain-structured Hessians.

Hard instances are evaluated in chain coordinates ``y = V^T w`` where the
columns of ``V`` are the (orthonormal) chain directions. Everything here is
immutable once built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class OclabError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class InvalidInput(OclabError, ValueError):
    exit_code = 1


class ConditionViolated(OclabError):
    """A parameter condition required by a construction does not hold."""

    exit_code = 2

    def __init__(self, message: str, condition: str = ""):
        super().__init__(message)
        self.condition = condition


class NumericalFailure(OclabError):
    exit_code = 3


class DimensionExhausted(OclabError):
    exit_code = 3


class AlgorithmFault(OclabError):
    exit_code = 3


# Basis generation ------------------------------------------------------------

REORTH_THRESHOLD = 1e-6


def _orthogonalize(x: np.ndarray, Q: Optional[np.ndarray]) -> np.ndarray:
    """Project ``x`` onto the orthogonal complement of the columns of ``Q``.

    Block Gram-Schmidt with an unconditional second pass ("twice is enough"),
    which keeps ``|<q, x>|`` at rounding level even after heavy cancellation.
    """
    if Q is None or Q.shape[1] == 0:
        return x
    x = x - Q @ (Q.T @ x)
    return x - Q @ (Q.T @ x)


def orthonormal_extension(
    dim: int,
    count: int,
    rng: np.random.Generator,
    against: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw ``count`` random unit vectors orthogonal to each other and to ``against``.

    ``against`` is a (dim, k) matrix of constraint vectors that need not be
    orthonormal. Returns a (dim, count) matrix with orthonormal columns.
    """
    if against is not None and against.size:
        # orthonormal basis of the constraint span (rank-revealing)
        u, s, _ = np.linalg.svd(np.asarray(against, dtype=float), full_matrices=False)
        tol = max(against.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        Q = u[:, s > tol]
    else:
        Q = np.zeros((dim, 0))
    if Q.shape[1] + count > dim:
        raise DimensionExhausted(
            f"need {count} new directions but only {dim - Q.shape[1]} remain in dimension {dim}"
        )
    if count > 8:
        # blocked variant: project a Gaussian block twice, then Householder QR;
        # repeat only when the QR leaks back into the constraint span (nearly
        # square blocks are the ill-conditioned case)
        G = rng.standard_normal((dim, count))
        for _ in range(2):
            G = G - Q @ (Q.T @ G)
            G, R = np.linalg.qr(G)
            if not Q.shape[1] or np.max(np.abs(Q.T @ G)) <= 4 * np.finfo(float).eps:
                break
            G = G - Q @ (Q.T @ G)
        # fix the sign convention so the result is a deterministic function of rng
        G *= np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
        return G
    out = np.empty((dim, count))
    for j in range(count):
        for _ in range(10):
            x = rng.standard_normal(dim)
            nrm = np.linalg.norm(x)
            x = _orthogonalize(x, Q)
            x = _orthogonalize(x, out[:, :j])
            r = np.linalg.norm(x)
            if r > REORTH_THRESHOLD * nrm:
                break
        else:  # pragma: no cover - probability zero for Gaussian draws
            raise NumericalFailure("failed to draw an independent direction")
        out[:, j] = x / r
    return out


@dataclass(frozen=True)
class Basis:
    """Orthonormal chain directions ``v_1..v_m`` stored as rows of ``vectors``."""

    vectors: np.ndarray
    seed: int = 0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if not np.all(np.isfinite(v)):
            raise InvalidInput("basis vectors must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def random(cls, dim: int, count: int, seed: int = 0) -> "Basis":
        if count > dim:
            raise DimensionExhausted(f"cannot fit {count} orthonormal vectors in R^{dim}")
        rng = np.random.default_rng(seed)
        return cls(orthonormal_extension(dim, count, rng).T.copy(), seed)

    @classmethod
    def standard(cls, dim: int, count: int) -> "Basis":
        return cls(np.eye(dim)[:count].copy(), seed=-1)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """(dim, count) matrix with the basis vectors as columns."""
        return self.vectors.T

    def orthonormality_error(self) -> float:
        G = self.vectors @ self.vectors.T
        return float(np.max(np.abs(G - np.eye(self.count)))) if self.count else 0.0


def project_to_chain(basis: Basis, w) -> np.ndarray:
    """Chain coordinates ``(<v_1, w>, ..., <v_m, w>)``."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.shape[0] != basis.dim:
        raise InvalidInput(f"point has shape {w.shape}, basis dimension is {basis.dim}")
    return basis.vectors @ w


def lift_from_chain(basis: Basis, chain_coords) -> np.ndarray:
    """Ambient point ``sum_j chain_coords[j] * v_j``."""
    c = np.asarray(chain_coords, dtype=float)
    if c.ndim != 1 or c.shape[0] != basis.count:
        raise InvalidInput(f"expected {basis.count} chain coordinates, got shape {c.shape}")
    return basis.vectors.T @ c


# Oracle replies ------------------------------------------------------------------


@dataclass(frozen=True)
class ChainHessian:
    """Hessian of the form ``V B V^T + shift * I``.

    ``B`` is symmetric tridiagonal with main diagonal ``diag`` and first
    off-diagonal ``off``. ``V`` is a (dim, m) matrix with orthonormal columns;
    ``None`` means chain coordinates are the ambient coordinates (V = I).
    """

    diag: np.ndarray
    off: np.ndarray
    shift: float = 0.0
    V: Optional[np.ndarray] = None
    dim: int = 0

    def __post_init__(self):
        if self.dim == 0:
            object.__setattr__(self, "dim", self.V.shape[0] if self.V is not None else len(self.diag))

    @property
    def m(self) -> int:
        return len(self.diag)

    def chain_matvec(self, a: np.ndarray) -> np.ndarray:
        out = self.diag * a
        if len(self.off):
            out[:-1] += self.off * a[1:]
            out[1:] += self.off * a[:-1]
        return out

    def to_chain(self, x: np.ndarray) -> np.ndarray:
        if self.V is None:
            return x[: self.m]
        return self.V.T @ x

    def from_chain(self, a: np.ndarray) -> np.ndarray:
        if self.V is None:
            out = np.zeros(self.dim)
            out[: self.m] = a
            return out
        return self.V @ a

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.from_chain(self.chain_matvec(self.to_chain(x))) + self.shift * x

    __matmul__ = matvec

    def chain_dense(self) -> np.ndarray:
        B = np.diag(self.diag)
        if len(self.off):
            B += np.diag(self.off, 1) + np.diag(self.off, -1)
        return B

    def dense(self) -> np.ndarray:
        B = self.chain_dense()
        if self.V is None:
            H = np.zeros((self.dim, self.dim))
            H[: self.m, : self.m] = B
        else:
            H = self.V @ B @ self.V.T
            H = 0.5 * (H + H.T)
        H[np.diag_indices(self.dim)] += self.shift
        return H

    def quad(self, u: np.ndarray) -> float:
        a = self.to_chain(u)
        return float(a @ self.chain_matvec(a) + self.shift * (u @ u))


@dataclass(frozen=True)
class OracleReply:
    """Value and derivatives at a query point.

    ``hessian`` is a dense array or a :class:`ChainHessian`; ``forms`` holds
    higher-order information as a callable ``forms(dirs) -> float`` evaluating
    the ``order``-th derivative tensor on a list of directions.
    """

    value: float
    gradient: np.ndarray
    hessian: Optional[object] = None
    order: int = 1
    forms: Optional[object] = field(default=None, compare=False)

    def hessian_dense(self) -> Optional[np.ndarray]:
        if self.hessian is None:
            return None
        if isinstance(self.hessian, ChainHessian):
            return self.hessian.dense()
        return np.asarray(self.hessian)

    def hessian_matvec(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.hessian, ChainHessian):
            return self.hessian.matvec(x)
        return np.asarray(self.hessian) @ x


def as_point(w: Sequence[float], dim: Optional[int] = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise InvalidInput("points must be one-dimensional")
    if dim is not None and w.shape[0] != dim:
        raise InvalidInput(f"point has dimension {w.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(w)):
        raise InvalidInput("point has non-finite entries")
    return w


# Run traces ----------------------------------------------------------------------


CSV_HEADER = "oracle_calls,f_gap,grad_norm,elapsed_ms"


@dataclass
class RunTrace:
    """Per-oracle-call record of an optimizer run or a game.

    ``records`` rows are (oracle_calls, f_gap, grad_norm, elapsed_ms), with
    ``f_gap`` the best suboptimality seen so far. ``raw_gaps`` keeps the
    suboptimality of each individual query and ``marks`` names special
    calls (phase switches, epoch ends).
    """

    optimizer_id: str
    params: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    raw_gaps: list = field(default_factory=list)
    marks: dict = field(default_factory=dict)
    complete: bool = False

    def add(self, calls: int, gap: float, grad_norm: float, elapsed_ms: float) -> None:
        if self.records and calls <= self.records[-1][0]:
            raise ValueError("oracle call counter must increase")
        best = min(gap, self.records[-1][1]) if self.records else gap
        self.records.append((int(calls), float(best), float(grad_norm), float(elapsed_ms)))
        self.raw_gaps.append(float(gap))

    def mark(self, name: str) -> None:
        self.marks.setdefault(name, []).append(self.calls)

    @property
    def calls(self) -> int:
        return self.records[-1][0] if self.records else 0

    @property
    def final_gap(self) -> float:
        return self.records[-1][1] if self.records else float("inf")

    def calls_to(self, eps: float) -> Optional[int]:
        """First oracle-call count at which the best gap is <= eps."""
        for c, gap, _, _ in self.records:
            if gap <= eps:
                return c
        return None

    def to_csv(self, timings: bool = True) -> str:
        lines = [CSV_HEADER]
        for c, gap, gn, ms in self.records:
            lines.append(f"{c},{gap:.17g},{gn:.17g},{(ms if timings else 0.0):.3f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "optimizer_id": self.optimizer_id,
            "params": self.params,
            "complete": self.complete,
            "marks": self.marks,
            "records": [list(r) for r in self.records],
        }
