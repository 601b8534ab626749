"""Command-line front end.

Exit codes: 0 certified / solved, 2 no certificate at this degree,
3 numerical failure, 64 usage error (bad flags, unreadable or malformed input).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .benchgen import BenchError, random_instance
from .certify import (V_along, analyze_l2_gain, simulate_closed_loop, simulate_disturbed, trajectory_csv,
                      verify_iss, verify_stability)
from .nnmodel import NeuralNetwork
from .polycore import Polynomial, StructuralError, VariableSpace
from .sdpsolver import SolverSettings, export_sdpa
from .semialg import ClosedLoopSystem, DisturbedSystem, build_K, build_Kw
from .sosbuilder import (PlanError, StructurallyInfeasible, build_iss_program, build_l2gain_program,
                         build_stability_program, coefficient_match, plan_degrees)

EXIT_OK, EXIT_NO_CERT, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def verdict_code(verdict: str) -> int:
    if verdict.startswith("certified"):
        return EXIT_OK
    if verdict in ("no-certificate-at-degree", "no-bound-at-degree"):
        return EXIT_NO_CERT
    return EXIT_NUMERIC


# ---------------------------------------------------------------------------
# input files


def read_json(path: str, what: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


def _matrix(data: dict, key: str, path: str, rows: int | None = None, cols: int | None = None,
            required: bool = True):
    if key not in data:
        if required:
            raise UsageError(f"{path}: missing field '{key}'")
        return None
    try:
        M = np.atleast_2d(np.asarray(data[key], dtype=float))
    except (TypeError, ValueError):
        raise UsageError(f"{path}: field '{key}' must be a numeric matrix") from None
    if M.ndim != 2 or (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        raise UsageError(f"{path}: field '{key}' has shape {M.shape}, expected ({rows}, {cols or '*'})")
    return M


def load_network(path: str) -> NeuralNetwork:
    data = read_json(path, "network")
    try:
        return NeuralNetwork.from_json(data)
    except (StructuralError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _poly_list(data: dict, key: str, space: VariableSpace, path: str) -> list:
    items = data.get(key, [])
    if not isinstance(items, list):
        raise UsageError(f"{path}: field '{key}' must be a list of polynomials")
    out = []
    for i, item in enumerate(items):
        try:
            out.append(Polynomial.from_json(space, item))
        except StructuralError as exc:
            raise UsageError(f"{path}: {key}[{i}]: {exc}") from None
    return out


def load_system(path: str, net: NeuralNetwork, disturbed: bool = False):
    """System file: {"type": "linear", "A", "B", ["E", "C", "q"]} or
    {"type": "polynomial", "f": [...], ["n_w", "f_y", "q"]} with polynomials over x1.., u1.., w1..."""
    data = read_json(path, "system")
    if not isinstance(data, dict):
        raise UsageError(f"{path}: top level must be an object")
    kind = data.get("type", "linear")
    try:
        if kind == "linear":
            A = _matrix(data, "A", path)
            n = A.shape[0]
            if A.shape[1] != n:
                raise UsageError(f"{path}: field 'A' must be square")
            B = _matrix(data, "B", path, rows=n)
            E = _matrix(data, "E", path, rows=n, required=disturbed)
            if E is None:
                return ClosedLoopSystem.linear(A, B, net)
            C = _matrix(data, "C", path, cols=n, required=False)
            C = np.eye(n) if C is None else C
            qdata = data.get("q")
            if qdata is not None and not isinstance(qdata, list):
                raise UsageError(f"{path}: field 'q' must be a list of polynomials")
            q = None
            if qdata:
                q = [lambda sp, d=d, i=i: _parse_poly(sp, d, f"{path}: q[{i}]") for i, d in enumerate(qdata)]
            return DisturbedSystem.linear_disturbed(A, B, E, C, net, q)
        if kind == "polynomial":
            f = data.get("f")
            if not isinstance(f, list) or not f:
                raise UsageError(f"{path}: field 'f' must be a nonempty list of polynomials")
            n, m = len(f), net.output_dim
            n_w = int(data.get("n_w", 0))
            if disturbed and n_w < 1:
                raise UsageError(f"{path}: a disturbed system needs 'n_w' >= 1")
            space = VariableSpace.build(n, m, 0, n_w)
            fs = _poly_list(data, "f", space, path)
            if n_w == 0:
                return ClosedLoopSystem(n, m, tuple(fs), net)
            fy = _poly_list(data, "f_y", space, path)
            q = _poly_list(data, "q", space, path) or [Polynomial.constant(space, 1.0)]
            return DisturbedSystem(n, m, tuple(fs), net, n_w=n_w, f_y=tuple(fy), q=tuple(q))
    except StructuralError as exc:
        raise UsageError(f"{path}: {exc}") from None
    raise UsageError(f"{path}: unknown system type {kind!r} (expected 'linear' or 'polynomial')")


def _parse_poly(space, data, where):
    try:
        return Polynomial.from_json(space, data)
    except StructuralError as exc:
        raise UsageError(f"{where}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def _settings(args) -> SolverSettings:
    return SolverSettings(tol_primal=args.sdp_tol, tol_dual=args.sdp_tol, tol_gap=args.sdp_tol,
                          max_iter=args.max_iter)


def _emit(report, args) -> int:
    print(report.summary())
    if args.out:
        Path(args.out).write_text(report.dumps() + "\n")
    return verdict_code(report.verdict)


def cmd_verify(args) -> int:
    net = load_network(args.nn)
    sysm = load_system(args.system, net)
    rep = verify_stability(sysm, settings=_settings(args), V_depends_on=args.v_depends_on,
                           epsilon=args.epsilon_margin, samples=args.samples, tol=args.tol, seed=args.seed,
                           deg_V=args.deg_v, target=args.target)
    return _emit(rep, args)


def cmd_gain(args) -> int:
    net = load_network(args.nn)
    dsys = load_system(args.system, net, disturbed=True)
    rep = analyze_l2_gain(dsys, settings=_settings(args), V_depends_on=args.v_depends_on, samples=args.samples,
                          tol=args.tol, seed=args.seed, deg_V=args.deg_v, target=args.target,
                          impose_q_successor=args.impose_q_successor)
    return _emit(rep, args)


def cmd_iss(args) -> int:
    net = load_network(args.nn)
    dsys = load_system(args.system, net, disturbed=True)
    rep = verify_iss(dsys, settings=_settings(args), force_gamma_zero=args.force_gamma_zero,
                     V_depends_on=args.v_depends_on, samples=args.samples, tol=args.tol, seed=args.seed,
                     deg_V=args.deg_v, target=args.target, impose_q_successor=args.impose_q_successor)
    return _emit(rep, args)


def _bench_one(job):
    n, neurons, seed, deg_v, v_dep, out_dir, sdp_tol, max_iter = job
    try:
        inst = random_instance(n, neurons, seed)
    except BenchError as exc:
        return {"n": n, "neurons": neurons, "seed": seed, "verdict": "generator-failure", "solve_time": "",
                "iterations": "", "message": str(exc)}
    settings = SolverSettings(tol_primal=sdp_tol, tol_dual=sdp_tol, tol_gap=sdp_tol, max_iter=max_iter)
    rep = verify_stability(inst.system(), settings=settings, V_depends_on=v_dep, deg_V=deg_v, seed=seed)
    if out_dir:
        stem = Path(out_dir) / f"n{n}_k{neurons}_s{seed}"
        s_txt, n_txt = inst.dumps()
        Path(f"{stem}_system.json").write_text(s_txt + "\n")
        Path(f"{stem}_nn.json").write_text(n_txt + "\n")
        Path(f"{stem}_report.json").write_text(rep.dumps() + "\n")
    return {"n": n, "neurons": neurons, "seed": seed, "verdict": rep.verdict,
            "solve_time": f"{rep.timings.get('solve', 0.0):.3f}", "iterations": rep.solver.get("iterations", "")}


def cmd_bench(args) -> int:
    seeds = args.seed_list or list(range(1, args.seeds + 1))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    jobs = [(args.n, args.neurons, s, args.deg_v, args.v_depends_on, args.out_dir, args.sdp_tol, args.max_iter)
            for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_bench_one, jobs))
    else:
        rows = [_bench_one(j) for j in jobs]
    fields = ["n", "neurons", "seed", "verdict", "solve_time", "iterations"]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        wr = csv.DictWriter(out, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    codes = [verdict_code(r["verdict"]) for r in rows]
    return max(codes) if codes else EXIT_OK


def cmd_simulate(args) -> int:
    net = load_network(args.nn)
    sysm = load_system(args.system, net)
    if args.x0:
        try:
            x0 = np.array([float(v) for v in args.x0.split(",")])
        except ValueError:
            raise UsageError("--x0 must be a comma-separated list of numbers") from None
        if x0.size != sysm.n:
            raise UsageError(f"--x0 has {x0.size} entries, the system has n = {sysm.n}")
    else:
        x0 = np.random.default_rng(args.seed).standard_normal(sysm.n)
    if isinstance(sysm, DisturbedSystem):
        traj = simulate_disturbed(sysm, x0, np.zeros((args.steps, sysm.n_w)))
        K = build_Kw(sysm)
    else:
        traj = simulate_closed_loop(sysm, x0, args.steps)
        K = build_K(sysm)
    V_vals = None
    if args.report:
        rep = read_json(args.report, "report")
        if "V" not in rep:
            raise UsageError(f"{args.report}: report carries no certificate 'V'")
        V = _parse_poly(K.space, rep["V"], f"{args.report}: V")
        V_vals = V_along(V, K, traj)
    text = trajectory_csv(traj)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if V_vals is not None:
        lines = ["k,V"] + [f"{k},{float(v)!r}" for k, v in enumerate(V_vals)]
        vtext = "\n".join(lines) + "\n"
        if args.v_out:
            Path(args.v_out).write_text(vtext)
        else:
            sys.stdout.write(vtext)
    if traj.diverged:
        print(f"trajectory diverged after {traj.steps} steps", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export_sdpa(args) -> int:
    net = load_network(args.nn)
    disturbed = args.kind != "stability"
    sysm = load_system(args.system, net, disturbed=disturbed)
    K = build_Kw(sysm) if disturbed else build_K(sysm)
    plan = plan_degrees(K, args.deg_v, args.target)
    if args.kind == "stability":
        prog = build_stability_program(K, plan, V_depends_on=args.v_depends_on, epsilon=args.epsilon_margin)
    elif args.kind == "l2gain":
        prog = build_l2gain_program(K, plan, V_depends_on=args.v_depends_on)
    else:
        prog = build_iss_program(K, plan, V_depends_on=args.v_depends_on, force_gamma_zero=args.force_gamma_zero)
    try:
        sdp = coefficient_match(prog)
    except StructurallyInfeasible as exc:
        print(f"no certificate at this degree: {exc}", file=sys.stderr)
        return EXIT_NO_CERT
    text = export_sdpa(sdp)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _even_degree(s):
    v = _positive_int(s)
    if v % 2:
        raise argparse.ArgumentTypeError("degree must be even")
    return v


def _positive_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nnsos", description="SOS certificates for neural-network feedback loops")
    p.add_argument("--config", help="JSON file of option defaults (command-line flags override)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, files=True, disturbed=False):
        if files:
            sp.add_argument("--system", required=True, help="system JSON")
            sp.add_argument("--nn", required=True, help="network JSON")
        sp.add_argument("--deg-v", type=_even_degree, default=2, help="degree of V (even)")
        sp.add_argument("--target", type=_even_degree, default=None, help="degree of the SOS identities")
        sp.add_argument("--v-depends-on", choices=("x", "full"), default="full")
        sp.add_argument("--sdp-tol", type=_positive_float, default=1e-8, help="solver tolerance")
        sp.add_argument("--max-iter", type=_positive_int, default=200)
        sp.add_argument("--seed", type=int, default=0)
        if disturbed:
            sp.add_argument("--impose-q-successor", action="store_true",
                            help="also constrain the successor disturbance by q")

    def checks(sp):
        sp.add_argument("--samples", type=_positive_int, default=20, help="validation rollouts")
        sp.add_argument("--tol", type=_positive_float, default=1e-6, help="validation tolerance")
        sp.add_argument("--out", help="report JSON path")

    v = sub.add_parser("verify", help="certify global asymptotic stability")
    common(v)
    checks(v)
    v.add_argument("--epsilon-margin", type=_positive_float, default=1.0,
                   help="decrease margin (1 is the stated condition)")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gain", help="upper-bound the l2 gain")
    common(g, disturbed=True)
    checks(g)
    g.set_defaults(func=cmd_gain)

    i = sub.add_parser("iss", help="certify input-to-state stability")
    common(i, disturbed=True)
    checks(i)
    i.add_argument("--force-gamma-zero", action="store_true", help="fix gamma = 0 (robust GAS)")
    i.set_defaults(func=cmd_iss)

    b = sub.add_parser("bench", help="random instances, certified end to end")
    common(b, files=False)
    b.set_defaults(v_depends_on="x")
    b.add_argument("--n", type=_positive_int, required=True)
    b.add_argument("--neurons", type=_positive_int, required=True)
    b.add_argument("--seeds", type=_positive_int, default=5, help="run seeds 1..SEEDS")
    b.add_argument("--seed-list", type=int, nargs="+", help="explicit seeds (overrides --seeds)")
    b.add_argument("--jobs", type=_positive_int, default=1)
    b.add_argument("--out-dir", help="directory for instance files and reports")
    b.add_argument("--csv", help="aggregate CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("simulate", help="closed-loop trajectory (and V along it)")
    s.add_argument("--system", required=True)
    s.add_argument("--nn", required=True)
    s.add_argument("--x0", help="comma-separated initial state (default: random from --seed)")
    s.add_argument("--steps", type=_positive_int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", help="report JSON whose V is evaluated along the trajectory")
    s.add_argument("--out", help="trajectory CSV path")
    s.add_argument("--v-out", help="V CSV path")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export-sdpa", help="write the SDP in SDPA sparse format")
    common(e)
    e.add_argument("--kind", choices=("stability", "l2gain", "iss"), default="stability")
    e.add_argument("--epsilon-margin", type=_positive_float, default=1.0)
    e.add_argument("--force-gamma-zero", action="store_true")
    e.add_argument("--out", help=".dat-s path (default stdout)")
    e.set_defaults(func=cmd_export_sdpa)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = read_json(args.config, "config")
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: config must be an object")
    cfg = {k.replace("-", "_"): val for k, val in cfg.items()}
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"{args.config}: unknown option(s) {', '.join(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"nnsos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanError as exc:
        print(f"nnsos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
