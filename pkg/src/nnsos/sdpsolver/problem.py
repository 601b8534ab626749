"""Block-structured SDP data and the residual measures used by the solver.

Standard (primal) form::

    minimise    sum_k <C_k, X_k>
    subject to  sum_k <A_rk, X_k> = b_r,   r = 1..m
                X_k PSD (psd blocks), X_k >= 0 (lp blocks), X_k free (free blocks)

PSD block variables are stored as their upper triangle in ``np.triu_indices``
order.  Constraint and cost data use the *matrix-entry* convention: an entry
``a`` at upper position (i, j), i < j, stands for the symmetric pair
``A_ij = A_ji = a`` so it contributes ``2 a X_ij`` to the inner product
(the SDPA convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

KINDS = ("psd", "lp", "free")


class ProblemError(ValueError):
    pass


@lru_cache(maxsize=64)
def triu(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n)
    i.setflags(write=False)
    j.setflags(write=False)
    return i, j


@lru_cache(maxsize=64)
def svec_weights(n: int) -> np.ndarray:
    i, j = triu(n)
    w = np.where(i == j, 1.0, 2.0)
    w.setflags(write=False)
    return w


def svec(M: np.ndarray) -> np.ndarray:
    i, j = triu(M.shape[0])
    return M[i, j].copy()


def smat(v: np.ndarray, n: int) -> np.ndarray:
    i, j = triu(n)
    M = np.zeros((n, n))
    M[i, j] = v
    M[j, i] = v
    return M


def tri_index(i: int, j: int, n: int) -> int:
    """Position of upper entry (i, j), i <= j, in ``np.triu_indices(n)`` order."""
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


@dataclass(frozen=True)
class Block:
    size: int
    kind: str = "psd"

    def __post_init__(self):
        if self.size < 1:
            raise ProblemError("block sizes must be >= 1")
        if self.kind not in KINDS:
            raise ProblemError(f"unknown block kind {self.kind!r}")

    @property
    def nvar(self) -> int:
        return self.size * (self.size + 1) // 2 if self.kind == "psd" else self.size

    @property
    def weights(self) -> np.ndarray:
        return svec_weights(self.size) if self.kind == "psd" else np.ones(self.size)


class SdpProblem:
    """Immutable SDP in standard form (see module docstring)."""

    def __init__(self, blocks: Sequence[Block], A: Sequence, b, C: Sequence | None = None,
                 check: bool = True):
        self.blocks = tuple(blocks)
        self.b = np.asarray(b, dtype=float).reshape(-1).copy()
        self.m = self.b.shape[0]
        As = []
        for blk, Ak in zip(self.blocks, A):
            Ak = sp.csr_matrix(Ak, dtype=float)
            if Ak.shape != (self.m, blk.nvar):
                raise ProblemError(f"constraint block has shape {Ak.shape}, expected {(self.m, blk.nvar)}")
            Ak.sum_duplicates()
            Ak.eliminate_zeros()
            Ak.sort_indices()
            As.append(Ak)
        if len(As) != len(self.blocks):
            raise ProblemError("need one constraint matrix per block")
        self.A = tuple(As)
        if C is None:
            C = [np.zeros(blk.nvar) for blk in self.blocks]
        Cs = []
        for blk, Ck in zip(self.blocks, C):
            Ck = np.asarray(Ck.toarray() if sp.issparse(Ck) else Ck, dtype=float).reshape(-1).copy()
            if Ck.shape[0] != blk.nvar:
                raise ProblemError("cost block has the wrong length")
            Ck.setflags(write=False)
            Cs.append(Ck)
        self.C = tuple(Cs)
        self.b.setflags(write=False)
        if check:
            self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.b)) or any(not np.all(np.isfinite(Ak.data)) for Ak in self.A):
            raise ProblemError("non-finite problem data")
        nnz = np.zeros(self.m, dtype=int)
        for Ak in self.A:
            nnz += np.diff(Ak.indptr)
        zero = np.flatnonzero(nnz == 0)
        if zero.size:
            raise ProblemError(f"constraint rows {zero[:5].tolist()} are all zero")

    @property
    def nvar(self) -> int:
        return sum(b.nvar for b in self.blocks)

    # operators on lists of per-block variable vectors
    def apply_A(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, Ak, xk in zip(self.blocks, self.A, xs):
            out += Ak @ (blk.weights * xk)
        return out

    def apply_AT(self, y: np.ndarray) -> list[np.ndarray]:
        """Upper-triangle entries of sum_r y_r A_r per block (matrix-entry convention)."""
        return [Ak.T @ y for Ak in self.A]

    def objective(self, xs: Sequence[np.ndarray]) -> float:
        return float(sum(np.dot(blk.weights * Ck, xk) for blk, Ck, xk in zip(self.blocks, self.C, xs)))

    def dual_objective(self, y: np.ndarray) -> float:
        return float(self.b @ y)

    def zero_point(self) -> list[np.ndarray]:
        return [np.zeros(b.nvar) for b in self.blocks]

    def block_matrices(self, xs: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Dense symmetric matrices for psd blocks, plain vectors otherwise."""
        return [smat(x, blk.size) if blk.kind == "psd" else np.asarray(x, dtype=float)
                for blk, x in zip(self.blocks, xs)]

    def describe(self) -> dict:
        return {"m": self.m, "blocks": [(b.size, b.kind) for b in self.blocks],
                "nnz": int(sum(Ak.nnz for Ak in self.A))}


def cone_violation(blk: Block, x: np.ndarray) -> float:
    """max(0, -min eigenvalue) for psd, max(0, -min entry) for lp, 0 for free."""
    if blk.kind == "free" or x.size == 0:
        return 0.0
    if blk.kind == "lp":
        return float(max(0.0, -np.min(x)))
    return float(max(0.0, -np.linalg.eigvalsh(smat(x, blk.size))[0]))


def residuals(prob: SdpProblem, xs: Sequence[np.ndarray], y: np.ndarray) -> tuple[float, float, float]:
    """(primal_inf, dual_inf, gap) of a candidate primal point ``xs`` and dual vector ``y``.

    primal_inf = max(||A(X) - b||_inf / (1 + ||b||_inf), cone violation of X);
    dual_inf   = cone violation of C - A^T y (the inf-norm of the residual on free
                 blocks), divided by 1 + ||C||_inf;
    gap        = |<C, X> - b^T y| / (1 + |<C, X>| + |b^T y|).
    """
    xs = [np.asarray(x, dtype=float) for x in xs]
    y = np.asarray(y, dtype=float)
    bscale, cscale = data_scales(prob)
    pinf = float(np.max(np.abs(prob.apply_A(xs) - prob.b))) / bscale if prob.m else 0.0
    for blk, x in zip(prob.blocks, xs):
        pinf = max(pinf, cone_violation(blk, x))
    dinf = 0.0
    for blk, Ck, ATy in zip(prob.blocks, prob.C, prob.apply_AT(y)):
        s = Ck - ATy
        if blk.kind == "free":
            dinf = max(dinf, float(np.max(np.abs(s))) if s.size else 0.0)
        else:
            dinf = max(dinf, cone_violation(blk, s))
    dinf /= cscale
    pobj, dobj = prob.objective(xs), prob.dual_objective(y)
    return pinf, dinf, rel_gap(pobj, dobj)


def rel_gap(pobj: float, dobj: float) -> float:
    return abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))


def data_scales(prob: SdpProblem) -> tuple[float, float]:
    """(1 + ||b||_inf, 1 + ||C||_inf), the denominators of the relative residuals."""
    bmax = float(np.max(np.abs(prob.b))) if prob.m else 0.0
    cmax = max((float(np.max(np.abs(c))) for c in prob.C if len(c)), default=0.0)
    return 1.0 + bmax, 1.0 + cmax


@dataclass
class SolverSettings:
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.99
    mehrotra: bool = True
    presolve: bool = True
    phase1: bool = True
    verbose: bool = False

    def __post_init__(self):
        if min(self.tol_primal, self.tol_dual, self.tol_gap) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SdpSolution:
    status: str  # optimal | infeasible-certificate | max-iterations | numerical-failure
    x: list
    y: np.ndarray
    primal_objective: float
    dual_objective: float
    residuals: tuple
    iterations: int
    log: list = field(default_factory=list)
    farkas: np.ndarray | None = None
    message: str = ""
    info: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.primal_objective

    @property
    def ok(self) -> bool:
        return self.status == "optimal"
