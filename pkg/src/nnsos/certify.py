"""End-to-end certification: build, solve, extract, validate, cross-check by simulation.

A certificate is only reported once it passes three independent checks:
(a) the matched identities re-expanded from the extracted polynomials,
(b) eigenvalues of every Gram matrix, each of which must also reproduce its
multiplier as b(x)'W b(x), and (c) the Lyapunov / dissipation
inequalities sampled along simulated trajectories.  Solver infeasibility is
reported as "no certificate at this degree", never as instability.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .nnmodel import nn_forward_with_lifts
from .polycore import Group, Polynomial, mono_mul, poly_mul
from .sdpsolver import SolverSettings, solve
from .semialg import ClosedLoopSystem, ConstraintSet, DisturbedSystem, build_K, build_Kw
from .sosbuilder import (DegreePlan, SosProgram, StructurallyInfeasible, build_iss_program, build_l2gain_program,
                         build_stability_program, coefficient_match, extract, identity_sides, plan_degrees)

DROP_REL = 1e-9
DIVERGENCE = 1e12
RADII = (0.1, 1.0, 10.0)
GAMMA_ZERO = 1e-6

VERDICTS = ("certified-GAS", "certified-attractive-only", "no-certificate-at-degree", "numerical-failure")
ISS_VERDICTS = ("certified-ISS", "certified-ISS-conditional", "certified-robust-GAS", "no-certificate-at-degree",
                "numerical-failure")
GAIN_VERDICTS = ("certified-l2-bound", "no-bound-at-degree", "numerical-failure")


# ---------------------------------------------------------------------------
# certificates and reports


@dataclass
class Certificate:
    kind: str  # "stability" | "l2gain" | "iss"
    V: Polynomial
    multipliers: dict
    gamma: float | None
    identity_residual: float
    min_gram_eig: float
    grams: dict = field(default_factory=dict, repr=False)
    scalars: dict = field(default_factory=dict, repr=False)
    program: SosProgram | None = field(default=None, repr=False)
    epsilon: float = 1.0

    def with_V(self, V: Polynomial) -> "Certificate":
        return Certificate(self.kind, V, self.multipliers, self.gamma, self.identity_residual, self.min_gram_eig,
                           self.grams, self.scalars, self.program, self.epsilon)

    def V_uses_only_x(self) -> bool:
        space = self.V.space
        return all(space.group_of(v) == Group.X for v in self.V.variables())

    def to_json(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "identity_residual": self.identity_residual,
                "min_gram_eig": self.min_gram_eig, "epsilon": self.epsilon, "V": self.V.to_json(),
                "multipliers": {k: p.to_json() for k, p in sorted(self.multipliers.items())}}


@dataclass
class ValidationReport:
    identity_residual: float
    identity_ok: bool
    min_gram_eig: float
    psd_ok: bool
    sampled_ok: bool
    worst_decrease: float  # largest violation of the sampled inequality (<= 0 is fine)
    min_V: float
    samples: int
    tol: float
    per_identity: dict = field(default_factory=dict)
    gram_residual: float = 0.0  # multiplier vs. its Gram form b'Wb

    @property
    def passed(self) -> bool:
        return self.identity_ok and self.psd_ok and self.sampled_ok

    def to_json(self) -> dict:
        return {"passed": self.passed, "a_identity": {"ok": self.identity_ok, "residual": self.identity_residual,
                                                      "per_identity": self.per_identity},
                "b_psd": {"ok": self.psd_ok, "min_eig": self.min_gram_eig, "gram_residual": self.gram_residual},
                "c_sampled": {"ok": self.sampled_ok, "worst_violation": self.worst_decrease, "min_V": self.min_V,
                              "rollouts": self.samples},
                "tol": self.tol}


@dataclass
class VerificationReport:
    verdict: str
    kind: str
    certificate: Certificate | None = None
    validation: ValidationReport | None = None
    boundedness_note: str = ""
    solver: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    program: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float | None:
        return self.certificate.gamma if self.certificate else None

    @property
    def bound(self) -> float | None:
        g = self.gamma
        return float(np.sqrt(max(g, 0.0))) if g is not None else None

    @property
    def certified(self) -> bool:
        return self.verdict.startswith("certified")

    def to_json(self) -> dict:
        out = {"verdict": self.verdict, "kind": self.kind, "gamma": self.gamma, "bound": self.bound,
               "boundedness_note": self.boundedness_note, "solver": self.solver, "simulation": self.simulation,
               "notes": self.notes, "program": self.program, "timings": self.timings}
        if self.validation is not None:
            out["validation"] = self.validation.to_json()
        if self.certificate is not None:
            out["residuals"] = {"identity": self.certificate.identity_residual,
                                "min_gram_eig": self.certificate.min_gram_eig,
                                "solver": self.solver.get("residuals")}
            out["V"] = self.certificate.V.to_json()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=False, default=_json_default)

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict}"]
        if self.gamma is not None:
            lines.append(f"gamma = {self.gamma:.6g}   sqrt(gamma) = {self.bound:.6g}")
        if self.certificate is not None:
            lines.append(f"V = {self.certificate.V.to_str(6)}")
        if self.validation is not None:
            v = self.validation
            lines.append(f"checks: identity {v.identity_residual:.2e} ({'ok' if v.identity_ok else 'FAIL'}), "
                         f"min Gram eig {v.min_gram_eig:.2e} ({'ok' if v.psd_ok else 'FAIL'}), "
                         f"sampled {'ok' if v.sampled_ok else 'FAIL'}")
        if self.solver:
            lines.append(f"solver: {self.solver.get('status')} in {self.solver.get('iterations')} iterations")
        if self.boundedness_note:
            lines.append(f"note: {self.boundedness_note}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# simulation


@dataclass
class Trajectory:
    x: np.ndarray  # (N+1, n)
    u: np.ndarray  # (N+1, m)
    lam: np.ndarray  # (N+1, lifts)
    w: np.ndarray | None = None  # (N, r)
    diverged: bool = False

    @property
    def steps(self) -> int:
        return self.x.shape[0] - 1


def simulate_closed_loop(sys: ClosedLoopSystem, x0, steps: int) -> Trajectory:
    """x_{k+1} = f(x_k, psi(x_k)); stops early (flagged) once |x| exceeds 1e12."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return _simulate(sys, x0, steps, None)


def simulate_disturbed(dsys: DisturbedSystem, x0, ws) -> Trajectory:
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    if ws.shape[1] != dsys.n_w:
        ws = ws.reshape(-1, dsys.n_w)
    return _simulate(dsys, x0, ws.shape[0], ws)


def _simulate(sys, x0, steps, ws) -> Trajectory:
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    xs = [x]
    diverged = False
    for k in range(steps):
        x = sys.step(x) if ws is None else sys.step(x, ws[k])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE:
            diverged = True
            break
        xs.append(x)
    X = np.array(xs)
    U, L = nn_forward_with_lifts(sys.net, X)
    U = np.atleast_2d(U).reshape(X.shape[0], -1)
    L = np.atleast_2d(L).reshape(X.shape[0], -1)
    W = None if ws is None else ws[: X.shape[0] - 1]
    return Trajectory(X, U, L, W, diverged)


def _current_points(K: ConstraintSet, x, u, lam, w=None) -> np.ndarray:
    return K.pack(x, u, lam, None, None, None, w, None)


def V_along(V: Polynomial, K: ConstraintSet, traj: Trajectory) -> np.ndarray:
    w = None
    if K.n_w:
        w = np.zeros((traj.x.shape[0], K.n_w))
        if traj.w is not None:
            w[: traj.w.shape[0]] = traj.w
    return V.evaluate_batch(_current_points(K, traj.x, traj.u, traj.lam, w))


def trajectory_csv(traj: Trajectory, V_values=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    n, m, nl = traj.x.shape[1], traj.u.shape[1], traj.lam.shape[1]
    head = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    head += [f"l{i + 1}" for i in range(nl)]
    if V_values is not None:
        head.append("V")
    wr.writerow(head)
    for k in range(traj.x.shape[0]):
        row = [k] + [repr(float(v)) for v in traj.x[k]] + [repr(float(v)) for v in traj.u[k]]
        row += [repr(float(v)) for v in traj.lam[k]]
        if V_values is not None:
            row.append(repr(float(V_values[k])))
        wr.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# validation


def _sample_states(rng: np.random.Generator, n: int, samples: int) -> np.ndarray:
    """Standard normal states spread over the radii 0.1, 1 and 10."""
    X = rng.standard_normal((samples, n))
    return X * np.array([RADII[i % len(RADII)] for i in range(samples)])[:, None]


def _admissible_w(dsys: DisturbedSystem, K: ConstraintSet, x, u, lam, w) -> np.ndarray:
    """Shrink w until q(x, u, w) >= 0 holds (w = 0 as the last resort)."""
    qidx = [i for i, t in enumerate(K.g_tags) if t == "disturbance"]
    if not qidx:
        return w
    for _ in range(12):
        pt = _current_points(K, x[None], u[None], lam[None], w[None])
        if all(K.g[i].evaluate_batch(pt)[0] >= 0 for i in qidx):
            return w
        w = w * 0.5
    return np.zeros_like(w)


def _identity_check(cert: Certificate, tol: float) -> tuple[float, dict]:
    prog = cert.program
    worst, per = 0.0, {}
    for ident in prog.identities:
        lhs, rhs = identity_sides(prog, ident, cert.V, cert.gamma, cert.multipliers)
        diff = (lhs - rhs).max_abs_coef()
        scale = 1.0 + max(lhs.max_abs_coef(), rhs.max_abs_coef())
        r = diff / scale
        per[ident.name] = r
        worst = max(worst, r)
    return worst, per


def gram_form(basis: list, W: np.ndarray) -> Polynomial:
    """b(x)' W b(x) for a list of basis polynomials."""
    space = basis[0].space
    if all(len(b.terms) == 1 for b in basis):
        monos = [next(iter(b.terms.items())) for b in basis]
        acc: dict = {}
        k = len(monos)
        for i in range(k):
            mi, ci = monos[i]
            for j in range(i, k):
                w = W[i, j] if i == j else 2.0 * W[i, j]
                if w != 0.0:
                    mj, cj = monos[j]
                    m = mono_mul(mi, mj)
                    acc[m] = acc.get(m, 0.0) + w * ci * cj
        return Polynomial(space, acc)
    out = Polynomial.zero(space)
    for i, bi in enumerate(basis):
        row = Polynomial.zero(space)
        for j, bj in enumerate(basis):
            if W[i, j] != 0.0:
                row = row + bj.scale(W[i, j])
        out = out + poly_mul(bi, row)
    return out


def _gram_consistency(cert: Certificate) -> float:
    """Largest relative mismatch between a multiplier and the Gram form / scalar it claims."""
    worst = 0.0
    for name, (basis, W) in cert.grams.items():
        if not basis:
            continue
        p, q = cert.multipliers[name], gram_form(basis, W)
        worst = max(worst, (p - q).max_abs_coef() / (1.0 + max(p.max_abs_coef(), q.max_abs_coef())))
    for name, v in cert.scalars.items():
        if name == "gamma" or name not in cert.multipliers:
            continue
        p = cert.multipliers[name]
        d = p - Polynomial.constant(p.space, v)
        worst = max(worst, d.max_abs_coef() / (1.0 + abs(v)))
    return worst


def _gram_check(cert: Certificate) -> float:
    eig = [float(np.linalg.eigvalsh(W)[0]) for _, W in cert.grams.values() if W.size]
    eig += [float(v) for k, v in cert.scalars.items() if k != "gamma"]
    if cert.gamma is not None:
        eig.append(float(cert.gamma))
    return min(eig, default=0.0)


def validate_certificate(cert: Certificate, K: ConstraintSet, sys: ClosedLoopSystem, samples: int = 20,
                         tol: float = 1e-6, steps: int = 50, seed: int = 0) -> ValidationReport:
    """Checks (a) identity re-expansion, (b) Gram PSD, (c) sampled inequalities on rollouts."""
    ident_res, per = _identity_check(cert, tol)
    min_eig = _gram_check(cert)
    gram_res = _gram_consistency(cert)
    rng = np.random.default_rng(seed)
    X0 = _sample_states(rng, sys.n, samples)
    worst, minV = -np.inf, np.inf
    V = cert.V
    for x0 in X0:
        if cert.kind == "stability":
            traj = simulate_closed_loop(sys, x0, steps)
            vals = V_along(V, K, traj)
            xx = np.sum(traj.x ** 2, axis=1)
            dV = vals[1:] - vals[:-1]
            viol = dV + cert.epsilon * xx[:-1] - tol * (1 + xx[:-1])
            worst = max(worst, float(np.max(viol)) if viol.size else -np.inf)
            minV = min(minV, float(np.min(vals)))
        else:
            worst_k, minV_k = _dissipation_rollout(cert, K, sys, x0, steps, rng, tol)
            worst = max(worst, worst_k)
            minV = min(minV, minV_k)
    sampled_ok = bool(worst <= 0.0 and minV >= -tol)
    return ValidationReport(ident_res, bool(ident_res <= tol), min_eig, bool(min_eig >= -tol and gram_res <= tol),
                            sampled_ok, float(worst), float(minV), samples, tol, per, gram_res)


def _dissipation_rollout(cert: Certificate, K: ConstraintSet, dsys: DisturbedSystem, x0, steps, rng, tol):
    gamma = cert.gamma or 0.0
    x = np.asarray(x0, dtype=float)
    worst, minV = -np.inf, np.inf
    scale = float(np.linalg.norm(x)) + 1e-3
    for _ in range(steps):
        u, lam = nn_forward_with_lifts(dsys.net, x)
        w = _admissible_w(dsys, K, x, u, lam, rng.standard_normal(dsys.n_w) * scale)
        xn = dsys.step(x, w)
        if not np.all(np.isfinite(xn)) or np.max(np.abs(xn)) > DIVERGENCE:
            return np.inf, minV
        un, lamn = nn_forward_with_lifts(dsys.net, xn)
        pts = _current_points(K, np.vstack([x, xn]), np.vstack([u, un]), np.vstack([lam, lamn]),
                              np.vstack([w, np.zeros_like(w)]))
        v0, v1 = cert.V.evaluate_batch(pts)
        xx, ww = float(x @ x), float(w @ w)
        if cert.kind == "l2gain":
            y = dsys.output(x)
            bound = -float(y @ y) + gamma * ww
            lower = 0.0
        else:
            bound = -xx + gamma * ww
            lower = xx
        worst = max(worst, v1 - v0 - bound - tol * (1 + xx + ww))
        minV = min(minV, v0 - lower + tol * xx)
        x = xn
        scale *= 0.7
    return worst, minV


# ---------------------------------------------------------------------------
# pipelines


def _solver_stats(sol, prog: SosProgram) -> dict:
    return {"status": sol.status, "iterations": sol.iterations, "residuals": list(map(float, sol.residuals)),
            "primal_objective": float(sol.primal_objective), "dual_objective": float(sol.dual_objective),
            "message": sol.message, "reduced": sol.info.get("reduced"),
            "sdp": prog.lowering.blocks and [(b.size, b.kind) for b in prog.lowering.blocks]}


def _run_program(prog: SosProgram, settings: SolverSettings | None, timings: dict):
    t = time.perf_counter()
    sdp = coefficient_match(prog)
    timings["match"] = time.perf_counter() - t
    t = time.perf_counter()
    sol = solve(sdp, settings or SolverSettings())
    timings["solve"] = time.perf_counter() - t
    return sdp, sol


def _certificate(prog: SosProgram, sol, timings: dict, epsilon: float = 1.0) -> Certificate:
    t = time.perf_counter()
    ex = extract(prog, sol.x, drop_rel=DROP_REL)
    timings["extract"] = time.perf_counter() - t
    cert = Certificate(prog.kind, ex.V, ex.multipliers, ex.gamma, 0.0, 0.0, ex.grams, ex.scalars, prog, epsilon)
    cert.identity_residual, _ = _identity_check(cert, 0.0)
    cert.min_gram_eig = _gram_check(cert)
    return cert


def _simulation_summary(sys, K, cert, seed: int, runs: int = 5, steps: int = 100) -> dict:
    rng = np.random.default_rng(seed + 1)
    conv, incr = [], 0.0
    for x0 in rng.standard_normal((runs, sys.n)):
        traj = simulate_closed_loop(sys, x0, steps)
        n0, n1 = float(np.linalg.norm(traj.x[0])), float(np.linalg.norm(traj.x[-1]))
        conv.append(bool(not traj.diverged and n1 <= 1e-4 * n0))
        if cert is not None:
            v = V_along(cert.V, K, traj)
            incr = max(incr, float(np.max(np.diff(v))) if v.size > 1 else 0.0)
    out = {"runs": runs, "steps": steps, "converged": sum(conv)}
    if cert is not None:
        out["max_V_increase"] = incr
    if cert is not None and sum(conv) < runs:
        out["warning"] = "a certified system produced a non-converging rollout"
    return out


def verify_stability(sys: ClosedLoopSystem, plan: DegreePlan | None = None, settings: SolverSettings | None = None,
                     V_depends_on: str = "full", epsilon: float = 1.0, samples: int = 20, tol: float = 1e-6,
                     seed: int = 0, deg_V: int = 2, target: int | None = None) -> VerificationReport:
    t_all = time.perf_counter()
    timings: dict = {}
    t = time.perf_counter()
    K = build_K(sys)
    plan = plan or plan_degrees(K, deg_V, target)
    prog = build_stability_program(K, plan, V_depends_on=V_depends_on, epsilon=epsilon)
    timings["build"] = time.perf_counter() - t
    report = VerificationReport("numerical-failure", "stability", program=prog.describe())
    if epsilon != 1.0:
        report.notes.append(f"decrease margin relaxed: epsilon = {epsilon:g} (the standard condition uses 1)")
    try:
        _, sol = _run_program(prog, settings, timings)
    except StructurallyInfeasible as exc:
        report.verdict = "no-certificate-at-degree"
        report.notes.append(str(exc))
        report.timings = {**timings, "total": time.perf_counter() - t_all}
        return report
    report.solver = _solver_stats(sol, prog)
    _finish(report, prog, sol, K, sys, timings, samples, tol, seed, epsilon)
    if report.verdict == "certified":
        cert = report.certificate
        if sys.net.is_relu:
            report.verdict = "certified-GAS"
            report.boundedness_note = "network is ReLU-modelled: piecewise-linear lifts are bounded by |x|, so the boundedness hypothesis holds"
        elif cert.V_uses_only_x():
            report.verdict = "certified-GAS"
            report.boundedness_note = "V depends on x only: global asymptotic stability follows directly"
        else:
            report.verdict = "certified-attractive-only"
            report.boundedness_note = ("V depends on (u, lam) and the network is not ReLU-modelled; boundedness "
                                       "near the origin is assumed by continuity, not machine-checked")
        report.simulation = _simulation_summary(sys, K, cert, seed)
    report.timings = {**timings, "total": time.perf_counter() - t_all}
    return report


def _finish(report, prog, sol, K, sys, timings, samples, tol, seed, epsilon=1.0):
    """Shared tail: map solver status, extract, validate.  Sets report.verdict = 'certified' on success."""
    if sol.status == "infeasible-certificate":
        report.verdict = "no-certificate-at-degree"
        report.notes.append(sol.message)
        return
    if sol.x is None or not all(np.all(np.isfinite(np.asarray(b))) for b in sol.x):
        report.verdict = "numerical-failure"
        report.notes.append(sol.message)
        return
    # a non-optimal stop still returns the best iterate; it is kept only if the independent checks pass
    cert = _certificate(prog, sol, timings, epsilon)
    t = time.perf_counter()
    val = validate_certificate(cert, K, sys, samples=samples, tol=tol, seed=seed)
    timings["validate"] = time.perf_counter() - t
    report.validation = val
    if val.passed:
        report.certificate = cert
        report.verdict = "certified"
        if sol.status != "optimal":
            report.notes.append(f"solver stopped with status {sol.status} ({sol.message}); the extracted certificate passed all "
                                "independent checks")
    else:
        report.verdict = "numerical-failure"
        report.certificate = cert
        report.notes.append(f"solver status {sol.status}; extracted certificate failed validation")


def analyze_l2_gain(dsys: DisturbedSystem, plan: DegreePlan | None = None, settings: SolverSettings | None = None,
                    V_depends_on: str = "full", samples: int = 20, tol: float = 1e-6, seed: int = 0,
                    deg_V: int = 2, target: int | None = None, impose_q_successor: bool = False
                    ) -> VerificationReport:
    t_all = time.perf_counter()
    timings: dict = {}
    t = time.perf_counter()
    Kw = build_Kw(dsys, impose_q_successor)
    plan = plan or plan_degrees(Kw, deg_V, target)
    prog = build_l2gain_program(Kw, plan, V_depends_on=V_depends_on)
    timings["build"] = time.perf_counter() - t
    report = VerificationReport("numerical-failure", "l2gain", program=prog.describe())
    try:
        _, sol = _run_program(prog, settings, timings)
    except StructurallyInfeasible as exc:
        report.verdict = "no-bound-at-degree"
        report.notes.append(str(exc))
        report.timings = {**timings, "total": time.perf_counter() - t_all}
        return report
    report.solver = _solver_stats(sol, prog)
    _finish(report, prog, sol, Kw, dsys, timings, samples, tol, seed)
    if report.verdict == "no-certificate-at-degree":
        report.verdict = "no-bound-at-degree"
    elif report.verdict == "certified":
        report.verdict = "certified-l2-bound"
        if report.certificate.gamma is not None and report.certificate.gamma < 0:
            report.certificate.gamma = 0.0
    report.timings = {**timings, "total": time.perf_counter() - t_all}
    return report


def bound_l2_gain(dsys: DisturbedSystem, plan: DegreePlan | None = None, settings: SolverSettings | None = None,
                  **kw) -> tuple[float | None, Certificate | None]:
    """(sqrt(gamma), certificate); (None, None) when no bound exists at this degree."""
    rep = analyze_l2_gain(dsys, plan, settings, **kw)
    if not rep.certified:
        return None, None
    return rep.bound, rep.certificate


def verify_iss(dsys: DisturbedSystem, plan: DegreePlan | None = None, settings: SolverSettings | None = None,
               force_gamma_zero: bool = False, V_depends_on: str = "full", samples: int = 20, tol: float = 1e-6,
               seed: int = 0, deg_V: int = 2, target: int | None = None, impose_q_successor: bool = False
               ) -> VerificationReport:
    t_all = time.perf_counter()
    timings: dict = {}
    t = time.perf_counter()
    Kw = build_Kw(dsys, impose_q_successor)
    plan = plan or plan_degrees(Kw, deg_V, target)
    timings["build"] = time.perf_counter() - t

    def attempt(zero: bool):
        prog = build_iss_program(Kw, plan, V_depends_on=V_depends_on, force_gamma_zero=zero)
        rep = VerificationReport("numerical-failure", "iss", program=prog.describe())
        try:
            _, sol = _run_program(prog, settings, timings)
        except StructurallyInfeasible as exc:
            rep.verdict = "no-certificate-at-degree"
            rep.notes.append(str(exc))
            return rep
        rep.solver = _solver_stats(sol, prog)
        _finish(rep, prog, sol, Kw, dsys, timings, samples, tol, seed)
        return rep

    report = attempt(force_gamma_zero)
    if report.verdict == "certified" and not force_gamma_zero and report.certificate.gamma <= GAMMA_ZERO:
        # the minimised gain is numerically zero: confirm with gamma fixed to 0
        second = attempt(True)
        if second.verdict == "certified":
            second.notes.append(f"minimised gamma = {report.certificate.gamma:.3g}; re-solved with gamma = 0")
            report = second
            force_gamma_zero = True
    if report.verdict == "certified":
        cert = report.certificate
        if force_gamma_zero:
            cert.gamma = 0.0
            report.verdict = "certified-robust-GAS"
        elif dsys.net.is_relu or cert.V_uses_only_x():
            report.verdict = "certified-ISS"
        else:
            report.verdict = "certified-ISS-conditional"
            report.boundedness_note = ("V depends on (u, lam) and the network is not ReLU-modelled; boundedness "
                                       "is assumed, not machine-checked")
    report.timings = {**timings, "total": time.perf_counter() - t_all}
    return report


# ---------------------------------------------------------------------------
# trajectory-level invariants


def telescoping_gap(cert: Certificate, K: ConstraintSet, sys: ClosedLoopSystem, x0, N: int = 100) -> float:
    """V(x0) - sum_{k<=N} |x_k|^2; nonnegative (up to tolerance) for a valid certificate."""
    traj = simulate_closed_loop(sys, x0, N)
    v0 = V_along(cert.V, K, traj)[0]
    return float(v0 - np.sum(traj.x ** 2))


def gain_gap(cert: Certificate, dsys: DisturbedSystem, ws) -> float:
    """gamma * sum |w|^2 - sum |y|^2 from x0 = 0; nonnegative for a valid gain certificate."""
    traj = simulate_disturbed(dsys, np.zeros(dsys.n), ws)
    y = dsys.output(traj.x)
    return float((cert.gamma or 0.0) * np.sum(np.asarray(ws) ** 2) - np.sum(y ** 2))
