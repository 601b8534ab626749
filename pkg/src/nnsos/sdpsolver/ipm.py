"""Infeasible primal-dual path-following method with Nesterov-Todd scaling.

Each iteration solves the Schur-complement system

    [ M    A_f ] [dy ]   [ r ]
    [ A_f' 0   ] [dxf] = [ rf]

with ``M_ij = <A_i, W A_j W>`` (plus the diagonal LP term).  PSD contributions
to ``M`` are accumulated from per-row eigen-factorisations ``A_i = sum d u u'``:
with all factors stacked in ``U`` one gets ``M = D' ((U'WU) o (U'WU)) D``.
Rows whose rank is large fall back to explicit ``W A_i W`` products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, SolverSettings, data_scales, rel_gap, smat, svec, svec_weights, triu

_CHUNK = 3000


class SchurFailure(RuntimeError):
    pass


@dataclass
class _PsdData:
    index: int
    n: int
    Aw: sp.csr_matrix  # weighted (m x nt), Aw @ svec(X) = A(X)
    A: sp.csr_matrix   # matrix-entry convention
    C: np.ndarray      # dense symmetric
    U: np.ndarray      # stacked factors (n x R)
    D: sp.csr_matrix   # (R x m) eigenvalue weights
    dense_rows: np.ndarray


def _factor_rows(A: sp.csr_matrix, n: int, m: int):
    """Eigen-factorise every constraint row of one psd block."""
    ti, tj = triu(n)
    cols_U, d_vals, owners, dense = [], [], [], []
    limit = max(1, n // 3)
    for r in range(m):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        if lo == hi:
            continue
        idx = A.indices[lo:hi]
        val = A.data[lo:hi]
        i, j = ti[idx], tj[idx]
        if hi - lo == 1 and i[0] == j[0]:
            u = np.zeros(n)
            u[i[0]] = 1.0
            cols_U.append(u)
            d_vals.append(val[0])
            owners.append(r)
            continue
        supp = np.unique(np.concatenate([i, j]))
        loc = {v: k for k, v in enumerate(supp)}
        S = np.zeros((supp.size, supp.size))
        for a, b_, v in zip(i, j, val):
            S[loc[a], loc[b_]] = v
            S[loc[b_], loc[a]] = v
        ev, V = np.linalg.eigh(S)
        keep = np.abs(ev) > 1e-12 * np.max(np.abs(ev))
        if keep.sum() > limit:
            dense.append(r)
            continue
        for e, vec in zip(ev[keep], V[:, keep].T):
            u = np.zeros(n)
            u[supp] = vec
            cols_U.append(u)
            d_vals.append(e)
            owners.append(r)
    R = len(cols_U)
    U = np.array(cols_U).T if R else np.zeros((n, 0))
    D = sp.csr_matrix((np.array(d_vals, dtype=float), (np.arange(R), np.array(owners, dtype=int))),
                      shape=(R, m))
    return U, D, np.array(dense, dtype=int)


class ConeData:
    """Solver-side view of an :class:`SdpProblem`."""

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        m = self.m = prob.m
        self.b = np.asarray(prob.b, dtype=float)
        self.psd: list[_PsdData] = []
        lp_A, lp_c, fr_A, fr_c = [], [], [], []
        self.lp_slices, self.fr_slices = {}, {}
        nl = nf = 0
        for k, (blk, Ak, Ck) in enumerate(zip(prob.blocks, prob.A, prob.C)):
            if blk.kind == "psd":
                w = svec_weights(blk.size)
                Aw = sp.csr_matrix(Ak @ sp.diags(w))
                U, D, dense = _factor_rows(Ak, blk.size, m)
                self.psd.append(_PsdData(k, blk.size, Aw, Ak, smat(Ck, blk.size), U, D, dense))
            elif blk.kind == "lp":
                lp_A.append(Ak)
                lp_c.append(Ck)
                self.lp_slices[k] = slice(nl, nl + blk.size)
                nl += blk.size
            else:
                fr_A.append(Ak)
                fr_c.append(Ck)
                self.fr_slices[k] = slice(nf, nf + blk.size)
                nf += blk.size
        self.nl, self.nf = nl, nf
        self.Al = sp.hstack(lp_A).tocsr() if lp_A else sp.csr_matrix((m, 0))
        self.cl = np.concatenate(lp_c) if lp_c else np.zeros(0)
        self.Af = (sp.hstack(fr_A).toarray() if fr_A else np.zeros((m, 0)))
        self.cf = np.concatenate(fr_c) if fr_c else np.zeros(0)
        self.AlT = self.Al.T.tocsr()
        self.n_cone = sum(p.n for p in self.psd) + nl

    # linear maps -------------------------------------------------------
    def A_psd(self, p: _PsdData, X: np.ndarray) -> np.ndarray:
        return p.Aw @ svec(X)

    def AT_psd(self, p: _PsdData, y: np.ndarray) -> np.ndarray:
        return smat(p.A.T @ y, p.n)

    def apply_A(self, X, xl, xf) -> np.ndarray:
        out = self.Al @ xl + self.Af @ xf
        for p, Xk in zip(self.psd, X):
            out += self.A_psd(p, Xk)
        return out

    # Schur complement ----------------------------------------------------
    def schur(self, Ws: list[np.ndarray], dl: np.ndarray) -> np.ndarray:
        m = self.m
        M = np.zeros((m, m))
        for p, W in zip(self.psd, Ws):
            M += self._schur_block(p, W)
        if self.nl:
            Ad = self.Al @ sp.diags(dl)
            M += (Ad @ self.AlT).toarray()
        return M

    def _schur_block(self, p: _PsdData, W: np.ndarray) -> np.ndarray:
        m = self.m
        Mb = np.zeros((m, m))
        R = p.U.shape[1]
        if R:
            WU = W @ p.U
            DT = p.D.T.tocsr()
            for c0 in range(0, R, _CHUNK):
                c1 = min(R, c0 + _CHUNK)
                Z = p.U.T @ WU[:, c0:c1]
                Z *= Z
                T = DT @ Z  # m x chunk
                Mb += (p.D[c0:c1].T @ T.T).T
        for r in p.dense_rows:
            Ar = smat(p.A.getrow(r).toarray().ravel(), p.n)
            v = p.Aw @ svec(W @ Ar @ W)
            Mb[r, :] = v
            Mb[:, r] = v
        return Mb


def _chol(X: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None


def _max_step(L: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with L L' + alpha dX PSD."""
    Y = sla.solve_triangular(L, dX, lower=True)
    Y = sla.solve_triangular(L, Y.T, lower=True)
    lam = np.linalg.eigvalsh((Y + Y.T) / 2)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    return float(np.min(-x[neg] / dx[neg])) if np.any(neg) else math.inf


class KKTSolver:
    """Factorise the Schur/KKT matrix with a diagonal regularisation ladder."""

    LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)

    def __init__(self, M: np.ndarray, Af: np.ndarray):
        self.M, self.Af = M, Af
        m, nf = Af.shape
        scale = max(1.0, float(np.max(np.abs(np.diag(M)))) if m else 1.0)
        self.reg = None
        for delta in self.LADDER:
            try:
                self._factor(delta * scale)
                self.reg = delta
                return
            except (np.linalg.LinAlgError, sla.LinAlgError, SchurFailure, ValueError):
                continue
        raise SchurFailure("Schur complement factorisation failed after regularisation")

    def _factor(self, d: float):
        m, nf = self.Af.shape
        if nf == 0:
            Md = self.M + d * np.eye(m) if d else self.M
            self.kind = "chol"
            self.fac = sla.cho_factor(Md, lower=True, check_finite=True)
            return
        K = np.zeros((m + nf, m + nf))
        K[:m, :m] = self.M
        K[:m, m:] = self.Af
        K[m:, :m] = self.Af.T
        if d:
            K[:m, :m] += d * np.eye(m)
            K[m:, m:] -= d * np.eye(nf)
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                lu = sla.lu_factor(K, check_finite=True)
            except sla.LinAlgWarning as exc:
                raise SchurFailure(str(exc)) from exc
        piv = np.abs(np.diag(lu[0]))
        if not np.all(np.isfinite(piv)) or piv.min() <= 1e-14 * max(piv.max(), 1.0) * 1e-6:
            raise SchurFailure("singular KKT system")
        self.kind = "lu"
        self.fac = lu
        self.K = K

    def _raw(self, r: np.ndarray, rf: np.ndarray):
        m = self.M.shape[0]
        if self.kind == "chol":
            return sla.cho_solve(self.fac, r), np.zeros(0)
        sol = sla.lu_solve(self.fac, np.concatenate([r, rf]))
        return sol[:m], sol[m:]

    def solve(self, r: np.ndarray, rf: np.ndarray, refine: int = 2):
        dy, dxf = self._raw(r, rf)
        for _ in range(refine):
            er = r - self.M @ dy - self.Af @ dxf
            ef = rf - self.Af.T @ dy
            cy, cf = self._raw(er, ef)
            dy, dxf = dy + cy, dxf + cf
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(dxf))):
            raise SchurFailure("non-finite search direction")
        return dy, dxf


@dataclass
class CoreResult:
    status: str
    X: list
    S: list
    xl: np.ndarray
    sl: np.ndarray
    xf: np.ndarray
    y: np.ndarray
    iterations: int
    log: list
    message: str = ""


def _initial_point(cd: ConeData):
    b = cd.b
    X, S = [], []
    for p in cd.psd:
        n = p.n
        # Frobenius norm of each row's matrix
        w = svec_weights(n)
        rown = np.sqrt(np.asarray(p.A.multiply(p.A) @ w).ravel())
        cn = np.linalg.norm(p.C)
        xi = max(10.0, math.sqrt(n), n * float(np.max((1 + np.abs(b)) / (1 + rown))) if cd.m else 1.0)
        eta = max(10.0, math.sqrt(n), (1 + max(float(rown.max()) if rown.size else 0.0, cn)) / math.sqrt(n))
        X.append(xi * np.eye(n))
        S.append(eta * np.eye(n))
    if cd.nl:
        rown = np.sqrt(np.asarray(cd.Al.multiply(cd.Al).sum(axis=1)).ravel())
        nl = cd.nl
        xi = max(10.0, math.sqrt(nl), nl * float(np.max((1 + np.abs(b)) / (1 + rown))))
        eta = max(10.0, math.sqrt(nl), (1 + max(float(rown.max()), np.linalg.norm(cd.cl))) / math.sqrt(nl))
        xl, sl = np.full(nl, xi), np.full(nl, eta)
    else:
        xl, sl = np.zeros(0), np.zeros(0)
    # shift y so that the starting point already satisfies pobj >= dobj + 1
    y = np.zeros(cd.m)
    pobj = sum(float(np.trace(p.C @ Xk)) for p, Xk in zip(cd.psd, X)) + float(cd.cl @ xl)
    bb = float(b @ b)
    if pobj < 1.0 and bb > 0:
        y = b * (pobj - 1.0) / bb
    return X, S, xl, sl, np.zeros(cd.nf), y


NO_PROGRESS = 15
ACCEPT_WINDOW = 100.0


def solve_core(prob: SdpProblem, settings: SolverSettings, cd: ConeData | None = None,
               accept=None) -> CoreResult:
    """Path-following on ``prob``.

    ``accept(CoreResult) -> bool``, when given, has the final word on
    convergence; it is consulted once the iterate is within ``ACCEPT_WINDOW``
    times the tolerances (used to judge iterates on the unreduced problem).
    """
    cd = cd or ConeData(prob)
    m = cd.m
    bscale, cscale = data_scales(prob)

    def converged(pinf, dinf, gap, X, S, xl, sl, xf, y, it):
        tols = (settings.tol_primal, settings.tol_dual, settings.tol_gap)
        if accept is None:
            return pinf <= tols[0] and dinf <= tols[1] and gap <= tols[2]
        if pinf > ACCEPT_WINDOW * tols[0] or dinf > ACCEPT_WINDOW * tols[1] or gap > ACCEPT_WINDOW * tols[2]:
            return False
        return bool(accept(CoreResult("optimal", X, S, xl, sl, xf, y, it, [])))

    X, S, xl, sl, xf, y = _initial_point(cd)
    log: list = []
    tau = settings.step_fraction
    nc = max(cd.n_cone, 1)
    best = None
    stall = 0
    status, message = "max-iterations", ""
    it = 0
    for it in range(settings.max_iter + 1):
        # residuals
        ATy = [cd.AT_psd(p, y) for p in cd.psd]
        rp = cd.b - cd.apply_A(X, xl, xf)
        Rd = [p.C - a - Sk for p, a, Sk in zip(cd.psd, ATy, S)]
        rdl = cd.cl - cd.AlT @ y - sl if cd.nl else np.zeros(0)
        rf = cd.cf - cd.Af.T @ y
        mu = (sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S)) + float(xl @ sl)) / nc
        pobj = sum(float(np.sum(p.C * Xk)) for p, Xk in zip(cd.psd, X)) + float(cd.cl @ xl) + float(cd.cf @ xf)
        dobj = float(cd.b @ y)
        pinf = float(np.max(np.abs(rp))) / bscale if m else 0.0
        dinf = max([float(np.max(np.abs(R))) for R in Rd] + [float(np.max(np.abs(rdl))) if rdl.size else 0.0,
                    float(np.max(np.abs(rf))) if rf.size else 0.0]) / cscale
        gap = rel_gap(pobj, dobj)
        log.append({"iter": it, "pobj": pobj, "dobj": dobj, "pinf": pinf, "dinf": dinf,
                    "gap": gap, "mu": mu})
        if settings.verbose:
            print(f"{it:3d} pobj {pobj: .8e} dobj {dobj: .8e} pinf {pinf:.1e} dinf {dinf:.1e} gap {gap:.1e} mu {mu:.1e}")
        score = max(pinf / settings.tol_primal, dinf / settings.tol_dual, gap / settings.tol_gap)
        if best is None or score < best[0]:
            best = (score, [x.copy() for x in X], [s.copy() for s in S], xl.copy(), sl.copy(), xf.copy(), y.copy(), it)
        if converged(pinf, dinf, gap, X, S, xl, sl, xf, y, it):
            status = "optimal"
            break
        if it - best[7] > NO_PROGRESS and mu < 1e-10 * (1.0 + abs(pobj)):
            status, message = "stalled", f"no progress for {NO_PROGRESS} iterations"
            break
        if pinf > settings.tol_primal and gap <= 1e-6 and pinf <= 1e-4 and it > 0:
            # keep the primal iterate on the constraints while the Schur system degrades
            pol = polish(cd, X, xl, xf, mu, rounds=2, truncate=False)
            if pol is not None:
                pinf_p = float(np.max(np.abs(cd.b - cd.apply_A(*pol)))) / bscale if m else 0.0
                if pinf_p < pinf:
                    X, xl, xf = pol
                    rp = cd.b - cd.apply_A(X, xl, xf)
                    pobj = (sum(float(np.sum(p.C * Xk)) for p, Xk in zip(cd.psd, X)) + float(cd.cl @ xl)
                            + float(cd.cf @ xf))
                    pinf = pinf_p
                    gap = rel_gap(pobj, dobj)
                    mu = (sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S)) + float(xl @ sl)) / nc
                    log[-1].update(pobj=pobj, pinf=pinf, gap=gap, mu=mu, corrected=True)
                    if converged(pinf, dinf, gap, X, S, xl, sl, xf, y, it):
                        status = "optimal"
                        break
        if dinf <= settings.tol_dual and gap <= settings.tol_gap and pinf <= 1e-4:
            pol = polish(cd, X, xl, xf, mu)
            if pol is not None:
                Xp, xlp, xfp = pol
                pinf_p = float(np.max(np.abs(cd.b - cd.apply_A(Xp, xlp, xfp)))) / bscale if m else 0.0
                pobj_p = (sum(float(np.sum(p.C * Xk)) for p, Xk in zip(cd.psd, Xp)) + float(cd.cl @ xlp)
                          + float(cd.cf @ xfp))
                gap_p = rel_gap(pobj_p, dobj)
                if converged(pinf_p, dinf, gap_p, Xp, S, xlp, sl, xfp, y, it):
                    X, xl, xf = Xp, xlp, xfp
                    log.append({"iter": it, "pobj": pobj_p, "dobj": dobj, "pinf": pinf_p, "dinf": dinf,
                                "gap": gap_p, "mu": mu, "polished": True})
                    status, message = "optimal", "polished"
                    break
        if it == settings.max_iter:
            break
        big = max([float(np.max(np.abs(Xk))) for Xk in X] + [float(np.max(xl)) if xl.size else 0.0,
                  float(np.max(np.abs(y))) if y.size else 0.0])
        if big > 1e12 or not math.isfinite(big):
            status, message = "diverged", "iterates unbounded"
            break
        # NT scaling
        Gs, Ginvs, lams, Ws = [], [], [], []
        for Xk, Sk in zip(X, S):
            L, Rr = _chol(Xk), _chol(Sk)
            if L is None or Rr is None:
                status, message = "numerical-failure", "iterate left the cone"
                break
            Uu, sv, Vh = np.linalg.svd(Rr.T @ L)
            sv = np.maximum(sv, 1e-300)
            G = (L @ Vh.T) / np.sqrt(sv)
            Ginv = (np.sqrt(sv)[:, None] * Vh) @ sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            Gs.append(G)
            Ginvs.append(Ginv)
            lams.append(sv)
            Ws.append(G @ G.T)
        if status == "numerical-failure":
            break
        dl = xl / sl if cd.nl else np.zeros(0)
        try:
            M = cd.schur(Ws, dl)
            kkt = KKTSolver(M, cd.Af)
        except SchurFailure as exc:
            status, message = "numerical-failure", str(exc)
            break

        def direction(Qs, hl):
            # dX + W dS W = G Q G' with dS = Rd - A^T dy; evaluated in the scaled space
            # (dX = G (Q - G' dS G) G') to avoid cancellation between large terms.
            r = rp.copy()
            for p, Q, G, R in zip(cd.psd, Qs, Gs, Rd):
                r -= cd.A_psd(p, G @ (Q - G.T @ R @ G) @ G.T)
            if cd.nl:
                r -= cd.Al @ (hl - dl * rdl)
            dy, dxf = kkt.solve(r, rf)
            for _ in range(3):
                dS = [R - cd.AT_psd(p, dy) for p, R in zip(cd.psd, Rd)]
                dX = []
                for Q, G, dSk in zip(Qs, Gs, dS):
                    D = G @ (Q - G.T @ dSk @ G) @ G.T
                    dX.append((D + D.T) / 2)
                dsl = rdl - cd.AlT @ dy if cd.nl else np.zeros(0)
                dxl = hl - dl * dsl if cd.nl else np.zeros(0)
                # refine against the exact operator; M only serves as a preconditioner here
                err = rp - cd.apply_A(dX, dxl, dxf)
                errf = rf - cd.Af.T @ dy
                size = 1.0 + float(np.max(np.abs(rp))) if m else 1.0
                if m == 0 or max(float(np.max(np.abs(err))), float(np.max(np.abs(errf))) if errf.size else 0.0) <= 1e-14 * size:
                    break
                cy, cf = kkt.solve(err, errf, refine=0)
                dy, dxf = dy + cy, dxf + cf
            return dX, dS, dxl, dsl, dy, dxf

        def steps(dX, dS, dxl, dsl):
            ap = ad = math.inf
            for Xk, Sk, dXk, dSk in zip(X, S, dX, dS):
                ap = min(ap, _max_step(np.linalg.cholesky(Xk), dXk))
                ad = min(ad, _max_step(np.linalg.cholesky(Sk), dSk))
            if cd.nl:
                ap = min(ap, _max_step_lp(xl, dxl))
                ad = min(ad, _max_step_lp(sl, dsl))
            return ap, ad

        try:
            # predictor
            Qs = [-np.diag(lam) for lam in lams]
            hl = -xl
            dXa, dSa, dxla, dsla, dya, dxfa = direction(Qs, hl)
            apa, ada = steps(dXa, dSa, dxla, dsla)
            apa, ada = min(1.0, apa), min(1.0, ada)
            if settings.mehrotra:
                mua = (sum(float(np.sum((Xk + apa * dX) * (Sk + ada * dS)))
                           for Xk, Sk, dX, dS in zip(X, S, dXa, dSa))
                       + float((xl + apa * dxla) @ (sl + ada * dsla))) / nc
                sigma = min(1.0, max(0.0, (mua / mu) ** 3)) if mu > 0 else 0.0
            else:
                sigma = 0.1
            # corrector
            Qs = []
            for G, Gi, lam, dX, dS in zip(Gs, Ginvs, lams, dXa, dSa):
                n = lam.size
                Rhs = -np.diag(lam ** 2) + sigma * mu * np.eye(n)
                if settings.mehrotra:
                    dXt = Gi @ dX @ Gi.T
                    dSt = G.T @ dS @ G
                    P = dXt @ dSt
                    Rhs -= (P + P.T) / 2
                Qs.append(2 * Rhs / (lam[:, None] + lam[None, :]))
            if cd.nl:
                hl = (sigma * mu - xl * sl - (dxla * dsla if settings.mehrotra else 0.0)) / sl
            else:
                hl = np.zeros(0)
            dX, dS, dxl, dsl, dy, dxf = direction(Qs, hl)
            ap, ad = steps(dX, dS, dxl, dsl)
        except (SchurFailure, np.linalg.LinAlgError) as exc:
            status, message = "numerical-failure", str(exc)
            break
        ap = min(1.0, tau * ap)
        ad = min(1.0, tau * ad)
        if ap < 1e-8 and ad < 1e-8:
            stall += 1
            if stall >= 5:
                status, message = "stalled", "step lengths collapsed"
                break
        else:
            stall = 0
        for _ in range(30):
            Xn = [Xk + ap * d for Xk, d in zip(X, dX)]
            if all(_chol(Xk) is not None for Xk in Xn) and (not cd.nl or np.all(xl + ap * dxl > 0)):
                break
            ap *= 0.8
        for _ in range(30):
            Sn = [Sk + ad * d for Sk, d in zip(S, dS)]
            if all(_chol(Sk) is not None for Sk in Sn) and (not cd.nl or np.all(sl + ad * dsl > 0)):
                break
            ad *= 0.8
        X, S = Xn, Sn
        xl = xl + ap * dxl
        xf = xf + ap * dxf
        sl = sl + ad * dsl
        y = y + ad * dy
    if status != "optimal" and best is not None:
        _, X, S, xl, sl, xf, y, _ = best
    return CoreResult(status, X, S, xl, sl, xf, y, it, log, message)


def polish(cd: ConeData, X, xl, xf, mu: float, rounds: int = 3, truncate: bool = True):
    """Restrict X to its dominant eigenspace and remove the primal residual there.

    With ``P`` the projector onto that face, the minimum-norm correction solves
    ``K z = r`` where ``K`` is the Schur matrix evaluated at ``W = P`` (plus the
    LP and free-variable terms); the correction is ``P (A^T z) P``.
    Returns the polished point or None if it leaves the cone.
    """
    Xs, Ps = [], []
    for Xk in X:
        lam, Q = np.linalg.eigh((Xk + Xk.T) / 2)
        cut = max(math.sqrt(max(mu, 0.0)), 1e-12 * max(lam[-1], 1.0))
        keep = lam > cut
        Qr = Q[:, keep]
        Xs.append((Qr * lam[keep]) @ Qr.T if truncate else Xk)
        Ps.append(Qr @ Qr.T)
    if cd.nl:
        cut = max(math.sqrt(max(mu, 0.0)), 1e-12 * max(float(np.max(xl)), 1.0))
        mask = (xl > cut).astype(float)
        if truncate:
            xl = xl * mask
    else:
        mask = np.zeros(0)
    xf = xf.copy()
    for _ in range(rounds):
        rp = cd.b - cd.apply_A(Xs, xl, xf)
        if not np.any(rp):
            break
        K = cd.schur(Ps, mask) + cd.Af @ cd.Af.T
        ev, V = np.linalg.eigh(K)
        inv = np.where(ev > 1e-13 * max(ev[-1], 1e-300), 1.0 / np.where(ev > 0, ev, 1.0), 0.0)
        z = V @ (inv * (V.T @ rp))
        Xs = [Xk + P @ cd.AT_psd(p, z) @ P for Xk, P, p in zip(Xs, Ps, cd.psd)]
        Xs = [(Xk + Xk.T) / 2 for Xk in Xs]
        if cd.nl:
            xl = xl + mask * (cd.AlT @ z)
        xf = xf + cd.Af.T @ z
    if truncate:
        for Xk in Xs:
            if np.linalg.eigvalsh(Xk)[0] < -1e-14 * max(1.0, float(np.max(np.abs(Xk)))):
                return None
    elif any(_chol(Xk) is None for Xk in Xs):
        return None
    if cd.nl and (np.any(xl < 0) if truncate else np.any(xl <= 0)):
        return None
    return Xs, xl, xf


def unpack(cd: ConeData, res: CoreResult) -> list[np.ndarray]:
    """Per-block variable vectors (triu entries for psd) of the problem ``cd`` came from."""
    prob = cd.prob
    out = []
    psd_iter = iter(zip(cd.psd, res.X))
    for k, blk in enumerate(prob.blocks):
        if blk.kind == "psd":
            _, Xk = next(psd_iter)
            out.append(svec(Xk))
        elif blk.kind == "lp":
            out.append(res.xl[cd.lp_slices[k]].copy())
        else:
            out.append(res.xf[cd.fr_slices[k]].copy())
    return out


def unpack_dual_slack(cd: ConeData, res: CoreResult) -> list[np.ndarray]:
    prob = cd.prob
    out = []
    psd_iter = iter(res.S)
    for k, blk in enumerate(prob.blocks):
        if blk.kind == "psd":
            out.append(svec(next(psd_iter)))
        elif blk.kind == "lp":
            out.append(res.sl[cd.lp_slices[k]].copy())
        else:
            out.append(np.zeros(blk.size))
    return out
