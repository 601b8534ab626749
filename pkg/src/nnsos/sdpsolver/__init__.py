"""Block SDP solver: primal-dual interior point with two-phase infeasibility detection."""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from .ipm import ConeData, SchurFailure, solve_core, unpack, unpack_dual_slack
from .presolve import presolve
from .problem import (Block, ProblemError, SdpProblem, SdpSolution, SolverSettings, cone_violation,
                      residuals, smat, svec)
from .sdpa import export_sdpa, import_sdpa

__all__ = ["Block", "SdpProblem", "SdpSolution", "SolverSettings", "ProblemError", "solve", "residuals",
           "export_sdpa", "import_sdpa", "smat", "svec", "farkas_check"]

INFEAS_TOL = 1e-6


def _run(prob: SdpProblem, settings: SolverSettings):
    chain = presolve(prob, dualize=settings.presolve)
    red = chain.problem
    cd = ConeData(red)

    def recover(core):
        xs_r = unpack(cd, core)
        ss_r = unpack_dual_slack(cd, core)
        return chain.recover(xs_r, core.y, ss_r)

    def accept(core) -> bool:
        # residuals are judged on the original data, whose objective offset and scaling differ
        xs, y, _ = recover(core)
        r = residuals(prob, xs, y)
        return r[0] <= settings.tol_primal and r[1] <= settings.tol_dual and r[2] <= settings.tol_gap

    core = solve_core(red, settings, cd, accept=None if red is prob else accept)
    xs, y, _ = recover(core)
    return core, xs, y, chain


def farkas_check(prob: SdpProblem, y: np.ndarray, tol: float = 1e-6) -> bool:
    """True if ``y`` certifies primal infeasibility: b'y = 1 and -A^T y in the dual cone."""
    by = float(prob.b @ y)
    if by <= 0:
        return False
    y = y / by
    scale = 1.0 + float(np.max(np.abs(y)))
    for blk, ATy in zip(prob.blocks, prob.apply_AT(y)):
        if blk.kind == "free":
            if ATy.size and np.max(np.abs(ATy)) > tol * scale:
                return False
        elif cone_violation(blk, -ATy) > tol * scale:
            return False
    return True


def _phase1(prob: SdpProblem, settings: SolverSettings):
    """min tau s.t. A(X) + tau r0 = b, with r0 = b - A(X0) for X0 = (I, 1, 0)."""
    x0 = []
    for blk in prob.blocks:
        if blk.kind == "psd":
            x0.append(svec(np.eye(blk.size)))
        elif blk.kind == "lp":
            x0.append(np.ones(blk.size))
        else:
            x0.append(np.zeros(blk.size))
    r0 = prob.b - prob.apply_A(x0)
    if np.max(np.abs(r0)) == 0:
        return None
    blocks = list(prob.blocks) + [Block(1, "lp")]
    A = list(prob.A) + [sp.csr_matrix(r0.reshape(-1, 1))]
    C = [np.zeros(b.nvar) for b in prob.blocks] + [np.ones(1)]
    p1 = SdpProblem(blocks, A, prob.b, C)
    s1 = SolverSettings(tol_primal=settings.tol_primal, tol_dual=settings.tol_dual, tol_gap=settings.tol_gap,
                        max_iter=settings.max_iter, step_fraction=settings.step_fraction,
                        mehrotra=settings.mehrotra, presolve=settings.presolve, phase1=False,
                        verbose=settings.verbose)
    core, xs, y, _ = _run(p1, s1)
    tau = float(xs[-1][0])
    return tau, y, core


def solve(prob: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    prob.validate()
    try:
        core, xs, y, chain = _run(prob, settings)
    except SchurFailure as exc:
        z = prob.zero_point()
        return SdpSolution("numerical-failure", z, np.zeros(prob.m), float("nan"), float("nan"),
                           (np.inf, np.inf, np.inf), 0, [], message=str(exc))
    res = residuals(prob, xs, y)
    pobj, dobj = prob.objective(xs), prob.dual_objective(y)
    info = {"reduced": chain.problem.describe(), "core_status": core.status,
            "time": time.perf_counter() - t0}
    ok = res[0] <= settings.tol_primal and res[1] <= settings.tol_dual and res[2] <= settings.tol_gap
    if core.status == "optimal" and ok:
        return SdpSolution("optimal", xs, y, pobj, dobj, res, core.iterations, core.log, info=info)
    status = {"diverged": "max-iterations", "stalled": "max-iterations"}.get(core.status, core.status)
    if core.status == "optimal":
        status = "max-iterations"
        info["note"] = "reduced problem converged but recovered residuals exceed tolerances"
    message = core.message
    farkas = None
    if settings.phase1:
        try:
            p1 = _phase1(prob, settings)
        except SchurFailure:
            p1 = None
        if p1 is not None:
            tau, yf, c1 = p1
            info["phase1_tau"] = tau
            info["phase1_status"] = c1.status
            if tau > INFEAS_TOL and farkas_check(prob, yf):
                farkas = yf / float(prob.b @ yf)
                status = "infeasible-certificate"
                message = f"phase 1 optimum tau = {tau:.3e}; Farkas ray verified"
    info["time"] = time.perf_counter() - t0
    return SdpSolution(status, xs, y, pobj, dobj, res, core.iterations, core.log, farkas=farkas,
                       message=message, info=info)
