"""Problem reductions applied before the interior-point method.

``merge_free_pairs``
    LP columns ``(j, k)`` with ``A_j = -A_k`` and ``c_j = -c_k`` (the usual
    split of a free variable) become one free variable.

``RemoveDependencies``
    Drops equality rows that are linear combinations of the others (after
    checking that ``b`` agrees) and free columns that are combinations of other
    free columns (after checking ``c`` agrees).  Either kind makes the Schur or
    KKT system singular, which stalls the interior-point method.

``Dualization``
    Every row ``r`` that owns a column appearing in no other row (a *pivot*)
    lets that variable be expressed through the remaining ones::

        v_p = (b_r - sum_t Ahat[r, t] theta_t) / Ahat[r, p]

    The problem then reads ``min c~' theta  s.t.  F(theta) in K,  E theta = e``
    over the non-pivot variables ``theta``, which is solved as the dual of a
    standard-form problem with ``#theta`` rows.  Coefficient-matching SDPs
    have one Gram entry per monomial row, so this shrinks the Schur
    complement from #monomials to #multiplier coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import Block, SdpProblem

_KIND_RANK = {"free": 0, "psd": 1, "lp": 2}


class Reduction:
    problem: SdpProblem

    def recover(self, xs, y, ss):
        """Map reduced (primal blocks, dual vector, dual slack blocks) back."""
        raise NotImplementedError


class Identity(Reduction):
    def __init__(self, prob: SdpProblem):
        self.problem = prob

    def recover(self, xs, y, ss):
        return xs, y, ss


class MergeFreePairs(Reduction):
    def __init__(self, prob: SdpProblem):
        self.orig = prob
        pairs = []  # (block, j, k)
        for bi, (blk, Ak, Ck) in enumerate(zip(prob.blocks, prob.A, prob.C)):
            if blk.kind != "lp" or blk.size < 2:
                continue
            Acsc = Ak.tocsc()
            seen: dict = {}
            used = set()
            for j in range(blk.size):
                lo, hi = Acsc.indptr[j], Acsc.indptr[j + 1]
                key = (tuple(Acsc.indices[lo:hi]), tuple(Acsc.data[lo:hi]), Ck[j])
                neg = (key[0], tuple(-v for v in key[1]), -Ck[j])
                if neg in seen and seen[neg] not in used and hi > lo:
                    k = seen.pop(neg)
                    pairs.append((bi, k, j))
                    used.update((k, j))
                else:
                    seen.setdefault(key, j)
        self.pairs = pairs
        if not pairs:
            self.problem = prob
            return
        blocks, A, C = [], [], []
        self.keep: dict[int, np.ndarray] = {}
        by_block: dict[int, list] = {}
        for bi, k, j in pairs:
            by_block.setdefault(bi, []).append((k, j))
        free_cols_A, free_c = [], []
        for bi, (blk, Ak, Ck) in enumerate(zip(prob.blocks, prob.A, prob.C)):
            if bi not in by_block:
                blocks.append(blk)
                A.append(Ak)
                C.append(Ck)
                continue
            drop = {c for pr in by_block[bi] for c in pr}
            keep = np.array([c for c in range(blk.size) if c not in drop], dtype=int)
            self.keep[bi] = keep
            if keep.size:
                blocks.append(Block(int(keep.size), "lp"))
                A.append(Ak[:, keep])
                C.append(Ck[keep])
            for k, _ in by_block[bi]:
                free_cols_A.append(Ak[:, [k]])
                free_c.append(Ck[k])
        blocks.append(Block(len(free_c), "free"))
        A.append(sp.hstack(free_cols_A).tocsr())
        C.append(np.array(free_c))
        self.problem = SdpProblem(blocks, A, prob.b, C)

    def recover(self, xs, y, ss):
        if not self.pairs:
            return xs, y, ss
        prob = self.orig
        out_x, out_s = [], []
        it = 0
        free_x = xs[-1]
        fi = 0
        for bi, blk in enumerate(prob.blocks):
            if bi not in self.keep:
                out_x.append(xs[it])
                out_s.append(ss[it])
                it += 1
                continue
            x = np.zeros(blk.size)
            s = np.zeros(blk.size)
            keep = self.keep[bi]
            if keep.size:
                x[keep] = xs[it]
                s[keep] = ss[it]
                it += 1
            for (pb, k, j) in self.pairs:
                if pb != bi:
                    continue
                v = free_x[fi]
                x[k], x[j] = max(v, 0.0), max(-v, 0.0)
                fi += 1
            out_x.append(x)
            out_s.append(s)
        return out_x, y, out_s


class Dualization(Reduction):
    """Pivot-based dualisation (see module docstring)."""

    def __init__(self, prob: SdpProblem, pivots: np.ndarray, Ahat: sp.csr_matrix, offsets: np.ndarray,
                 weights: np.ndarray):
        self.orig = prob
        nv = Ahat.shape[1]
        self.offsets = offsets
        self.weights = weights
        chat = np.concatenate([blk.weights * Ck for blk, Ck in zip(prob.blocks, prob.C)])
        self.chat = chat
        self.Ahat = Ahat
        self.pivots = pivots  # row -> column or -1
        piv_rows = np.flatnonzero(pivots >= 0)
        is_piv = np.zeros(nv, dtype=bool)
        is_piv[pivots[piv_rows]] = True
        theta = np.flatnonzero(~is_piv)
        self.theta = theta
        self.e_rows = np.flatnonzero(pivots < 0)
        pv = pivots[piv_rows]
        piv_coef = np.asarray(Ahat[piv_rows, pv]).ravel()
        self.piv_rows, self.piv_cols, self.piv_coef = piv_rows, pv, piv_coef
        # T = rows of Ahat restricted to pivot rows and theta columns, scaled by -1/pivot
        Ap = Ahat[piv_rows][:, theta]
        Tm = sp.diags(-1.0 / piv_coef) @ Ap  # (npiv x ntheta): v_p = f0_p + T theta
        f0 = prob.b[piv_rows] / piv_coef
        self.T, self.f0 = Tm.tocsr(), f0
        ctil = chat[theta] + Tm.T @ chat[pv]
        self.const = float(chat[pv] @ f0)
        # assemble F per cone block: F(theta) entries at global variable index
        # rows of the reduced problem are theta indices
        ntheta = theta.size
        E = Ahat[self.e_rows][:, theta].tocsr()
        blocks, A, C = [], [], []
        self.block_map = []
        # Build a sparse (nv x ntheta) map G with v = g0 + G theta
        Gpiv = sp.csr_matrix((Tm.data, Tm.indices, Tm.indptr), shape=Tm.shape)
        Grows = sp.coo_matrix(Gpiv)
        rows = np.concatenate([pv[Grows.row], theta])
        cols = np.concatenate([Grows.col, np.arange(ntheta)])
        vals = np.concatenate([Grows.data, np.ones(ntheta)])
        G = sp.csr_matrix((vals, (rows, cols)), shape=(nv, ntheta))
        g0 = np.zeros(nv)
        g0[pv] = f0
        self.G, self.g0 = G, g0
        for bi, blk in enumerate(prob.blocks):
            if blk.kind == "free":
                continue
            lo, hi = offsets[bi], offsets[bi + 1]
            Gk = G[lo:hi]  # (nvar_k x ntheta)
            blocks.append(blk)
            A.append((-Gk).T.tocsr())
            C.append(g0[lo:hi].copy())
            self.block_map.append(bi)
        if self.e_rows.size:
            blocks.append(Block(int(self.e_rows.size), "free"))
            A.append(E.T.tocsr())
            C.append(prob.b[self.e_rows].copy())
        # drop rows of the reduced problem that are all zero
        nnz = np.zeros(ntheta, dtype=int)
        for Ak in A:
            nnz += np.diff(Ak.indptr)
        live = nnz > 0
        dead = np.flatnonzero(~live)
        if np.any(np.abs(ctil[dead]) > 0):
            raise ValueError("objective unbounded along an unconstrained variable")
        self.live = np.flatnonzero(live)
        A = [Ak[self.live] for Ak in A]
        self.problem = SdpProblem(blocks, A, -ctil[self.live], C)

    def recover(self, xs, y, ss):
        prob = self.orig
        theta = np.zeros(self.theta.size)
        theta[self.live] = y
        v = self.g0 + self.G @ theta
        out_x = [v[self.offsets[k]:self.offsets[k + 1]].copy() for k in range(len(prob.blocks))]
        # dual slack of the original problem (matrix-entry vectors per block)
        s_var = np.zeros(self.G.shape[0])
        out_s = [np.zeros(blk.nvar) for blk in prob.blocks]
        for j, bi in enumerate(self.block_map):
            out_s[bi] = np.asarray(xs[j], dtype=float).copy()
            lo, hi = self.offsets[bi], self.offsets[bi + 1]
            s_var[lo:hi] = prob.blocks[bi].weights * out_s[bi]
        yo = np.zeros(prob.m)
        yo[self.piv_rows] = (self.chat[self.piv_cols] - s_var[self.piv_cols]) / self.piv_coef
        if self.e_rows.size:
            yo[self.e_rows] = -np.asarray(xs[-1], dtype=float)
        return out_x, yo, out_s


DEP_TOL = 1e-13
CONSISTENCY_TOL = 1e-9


def _independent(G: np.ndarray) -> np.ndarray:
    """Sorted indices of a maximal independent subset, from pivoted QR of a Gram matrix."""
    if G.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = sla.qr(G, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[0] == 0.0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(d > DEP_TOL * d[0]))
    return np.sort(piv[:rank])


def _dependents(M: sp.csr_matrix, keep: np.ndarray, drop: np.ndarray):
    """Z with M[drop] = Z M[keep] (rows of a sparse matrix), or None if the fit is poor."""
    Mk, Md = M[keep], M[drop]
    Gk = (Mk @ Mk.T).toarray()
    Z = sla.solve(Gk, (Mk @ Md.T).toarray(), assume_a="pos").T
    err = abs(Md - sp.csr_matrix(Z) @ Mk).max() if Md.nnz or Z.size else 0.0
    scale = 1.0 + abs(M).max()
    return Z if err <= CONSISTENCY_TOL * scale else None


class RemoveDependencies(Reduction):
    MAX_ROWS = 6000

    def __init__(self, prob: SdpProblem):
        self.orig = self.problem = prob
        self.rows = np.arange(prob.m)
        self.free_keep = None
        m = prob.m
        if m == 0 or m > self.MAX_ROWS:
            return
        weights = np.concatenate([b.weights for b in prob.blocks])
        Ahat = (sp.hstack(list(prob.A)).tocsr() @ sp.diags(weights)).tocsr()
        rows = _independent((Ahat @ Ahat.T).toarray())
        if rows.size < m:
            drop = np.setdiff1d(np.arange(m), rows)
            Z = _dependents(Ahat, rows, drop)
            if Z is None or np.max(np.abs(prob.b[drop] - Z @ prob.b[rows])) > CONSISTENCY_TOL * (
                    1.0 + np.max(np.abs(prob.b))):
                rows = np.arange(m)  # inconsistent: leave it to the infeasibility detection
        self.rows = rows
        fi = [i for i, b in enumerate(prob.blocks) if b.kind == "free"]
        free_keep = None
        if len(fi) == 1:
            Af = prob.A[fi[0]][rows].tocsc()
            cf = prob.C[fi[0]]
            cols = _independent((Af.T @ Af).toarray())
            if cols.size < Af.shape[1]:
                drop = np.setdiff1d(np.arange(Af.shape[1]), cols)
                AfT = Af.T.tocsr()
                Z = _dependents(AfT, cols, drop) if cols.size else np.zeros((drop.size, 0))
                if Z is not None and np.max(np.abs(cf[drop] - Z @ cf[cols])) <= CONSISTENCY_TOL * (
                        1.0 + np.max(np.abs(cf))):
                    free_keep = cols
        self.free_keep = free_keep
        if rows.size == m and free_keep is None:
            return
        blocks, A, C = [], [], []
        for blk, Ak, Ck in zip(prob.blocks, prob.A, prob.C):
            Ak = Ak[rows]
            if blk.kind == "free" and free_keep is not None:
                if free_keep.size == 0:
                    continue
                blk, Ak, Ck = Block(int(free_keep.size), "free"), Ak[:, free_keep], Ck[free_keep]
            blocks.append(blk)
            A.append(Ak)
            C.append(Ck)
        self.problem = SdpProblem(blocks, A, prob.b[rows], C)

    def recover(self, xs, y, ss):
        if self.problem is self.orig:
            return xs, y, ss
        yy = np.zeros(self.orig.m)
        yy[self.rows] = y
        out_x, out_s, it = [], [], 0
        for blk in self.orig.blocks:
            if blk.kind == "free" and self.free_keep is not None:
                x, s = np.zeros(blk.size), np.zeros(blk.size)
                if self.free_keep.size:
                    x[self.free_keep], s[self.free_keep] = xs[it], ss[it]
                    it += 1
                out_x.append(x)
                out_s.append(s)
                continue
            out_x.append(xs[it])
            out_s.append(ss[it])
            it += 1
        return out_x, yy, out_s


def choose_pivots(prob: SdpProblem):
    """Pivot column per row (or -1) plus the weighted global constraint matrix."""
    blocks = prob.blocks
    offsets = np.concatenate([[0], np.cumsum([b.nvar for b in blocks])]).astype(int)
    weights = np.concatenate([b.weights for b in blocks])
    kinds = np.concatenate([np.full(b.nvar, _KIND_RANK[b.kind]) for b in blocks])
    Ahat = (sp.hstack(list(prob.A)).tocsr() @ sp.diags(weights)).tocsr()
    Acsc = Ahat.tocsc()
    colnnz = np.diff(Acsc.indptr)
    single = np.flatnonzero(colnnz == 1)
    rows = Acsc.indices[Acsc.indptr[single]]
    vals = np.abs(Acsc.data[Acsc.indptr[single]])
    order = np.lexsort((-vals, kinds[single], rows))
    pivots = -np.ones(prob.m, dtype=int)
    for idx in order:
        r = rows[idx]
        if pivots[r] < 0:
            pivots[r] = single[idx]
    return pivots, Ahat, offsets, kinds, weights


def dualize_if_smaller(prob: SdpProblem, ratio: float = 0.7) -> Reduction:
    pivots, Ahat, offsets, _, weights = choose_pivots(prob)
    npiv = int(np.sum(pivots >= 0))
    ntheta = Ahat.shape[1] - npiv
    n_e = prob.m - npiv
    if npiv == 0 or ntheta + n_e >= ratio * prob.m:
        return Identity(prob)
    try:
        return Dualization(prob, pivots, Ahat, offsets, weights)
    except ValueError:
        return Identity(prob)


@dataclass
class Chain(Reduction):
    steps: list

    @property
    def problem(self):
        return self.steps[-1].problem

    def recover(self, xs, y, ss):
        for st in reversed(self.steps):
            xs, y, ss = st.recover(xs, y, ss)
        return xs, y, ss


def presolve(prob: SdpProblem, dualize: bool = True) -> Chain:
    steps = [MergeFreePairs(prob)]
    if dualize:
        steps.append(dualize_if_smaller(steps[-1].problem))
    steps.append(RemoveDependencies(steps[-1].problem))
    return Chain(steps)
