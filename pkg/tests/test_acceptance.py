"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary."""

import time

import numpy as np
import pytest

from nnsos.benchgen import random_instance
from nnsos.certify import (V_along, bound_l2_gain, simulate_closed_loop, telescoping_gap, validate_certificate,
                           verify_iss, verify_stability)
from nnsos.nnmodel import Activation, encode_network, membership_check, nn_forward, nn_forward_with_lifts, \
    random_network, sat_to_relu
from nnsos.sdpsolver import export_sdpa, import_sdpa, residuals, solve
from nnsos.semialg import build_K

import conftest
from helpers import (l2_gain_by_frequency, random_sdp, random_sizes, scalar_disturbed, scalar_system,
                     w_pinned_to_zero)
from test_certify import flip


def record(num: int, ok: bool, detail: str):
    conftest.ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} C{num}: {detail}")
    print(conftest.ACCEPTANCE[-1])
    assert ok, detail


ACTS = [Activation.relu(), Activation.leaky(0.1), Activation.sat(), Activation.sat(-0.5, 2.0),
        Activation.identity()]


@pytest.fixture(scope="module")
def half():
    sys = scalar_system(0.5)
    return sys, build_K(sys), verify_stability(sys)


@pytest.fixture(scope="module")
def bench_runs():
    runs = {}
    for seed in range(1, 6):
        t = time.perf_counter()
        inst = random_instance(10, 100, seed)
        sys = inst.system()
        rep = verify_stability(sys, V_depends_on="x", seed=seed)
        runs[seed] = (sys, rep, time.perf_counter() - t)
    return runs


def test_c1_encoding_soundness():
    rng = np.random.default_rng(1)
    t = time.perf_counter()
    bad = 0
    kinds = set()
    for k in range(60):
        depth = 1 + k % 3
        hidden = [int(w) for w in rng.integers(1, 21, depth)]
        acts = [ACTS[int(i)] for i in rng.integers(0, len(ACTS), depth)]
        acts[0] = ACTS[k % len(ACTS)]
        kinds |= {a.kind for a in acts}
        net = random_network(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)), hidden, acts,
                             final=ACTS[int(rng.integers(0, len(ACTS)))])
        X = 3.0 * rng.standard_normal((500, net.input_dim))
        u, lam = nn_forward_with_lifts(net, X)
        bad += int(np.sum(~membership_check(encode_network(net), X, u, lam, tol=1e-9)))
    dt = time.perf_counter() - t
    record(1, bad == 0 and dt < 10 and kinds == {"relu", "leaky", "sat", "id"},
           f"60 networks x 500 inputs, {bad} membership failures at tol 1e-9, {dt:.2f} s (< 10 s)")


def test_c2_sat_to_relu():
    rng = np.random.default_rng(2)
    t = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 11))
        D = 2.0 * rng.standard_normal((n, n))
        X = 2.0 * rng.standard_normal((1000, n))
        worst = max(worst, float(np.max(np.abs(nn_forward(sat_to_relu(D), X) - np.clip(X @ D.T, -1, 1)))))
    dt = time.perf_counter() - t
    record(2, worst <= 1e-12 and dt < 5, f"20 matrices x 1000 points, max error {worst:.1e} (<= 1e-12), {dt:.2f} s")


def test_c3_scalar_stability_oracle(half):
    t = time.perf_counter()
    sys = scalar_system(0.5)
    rep = verify_stability(sys)
    dt = time.perf_counter() - t
    xs = np.linspace(-5, 5, 201)[:, None]
    K = rep.certificate.program.K if rep.certificate else None
    ok = rep.verdict == "certified-GAS" and rep.validation.passed
    margin = -np.inf
    if ok:
        lam = np.maximum(xs, 0)
        z = np.zeros_like(xs)
        V = rep.certificate.V
        drop = (V.evaluate_batch(K.pack(xs, z, lam, None, None, None))
                - V.evaluate_batch(K.pack(xs / 2, z, lam / 2, None, None, None)))
        margin = float(np.min(drop - xs[:, 0] ** 2))
        # V restricted to the graph of the closed loop is v * x^2 with v >= 4/3
        v = V.evaluate_batch(K.pack(np.ones((1, 1)), z[:1], np.ones((1, 1)), None, None, None))[0]
        ok = margin >= -1e-6 and v >= 4.0 / 3.0 - 1e-6 and dt < 5
    record(3, ok, f"x+ = 0.5x: {rep.verdict}, min V(x) - V(x/2) - x^2 on grid = {margin:.1e}, {dt:.2f} s (< 5 s)")


def test_c4_negative_control(half, bench_runs):
    verdicts = [verify_stability(scalar_system(2.0), deg_V=d).verdict for d in (2, 4)]
    survived = 0
    tried = 0
    shipped = [(half[0], half[1], half[2].certificate)]
    sys5, rep5, _ = bench_runs[1]
    if rep5.certificate is not None:
        shipped.append((sys5, rep5.certificate.program.K, rep5.certificate))
    for sys, K, cert in shipped:
        for k in range(len(cert.V.terms)):
            tried += 1
            survived += int(validate_certificate(cert.with_V(flip(cert.V, k)), K, sys, samples=2).identity_ok)
    ok = verdicts == ["no-certificate-at-degree"] * 2 and survived == 0 and len(shipped) == 2
    record(4, ok, f"x+ = 2x at deg 2/4: {verdicts}; {survived}/{tried} sign-flip mutations passed check (a)")


def test_c5_bench_protocol(bench_runs):
    lines = []
    ok = True
    for seed, (_, rep, dt) in bench_runs.items():
        ok &= rep.verdict == "certified-GAS" and dt < 300
        lines.append(f"s{seed} {rep.verdict} {dt:.1f}s")
    t = time.perf_counter()
    rep20 = verify_stability(random_instance(20, 10, 1).system(), V_depends_on="x")
    dt20 = time.perf_counter() - t
    ok &= rep20.verdict == "certified-GAS" and dt20 < 120
    record(5, ok, f"n=10/100: {', '.join(lines)} (< 300 s each); n=20/10: {rep20.verdict} {dt20:.1f}s (< 120 s)")


def test_c6_trajectory(bench_runs):
    sys, rep, _ = bench_runs[1]
    x0 = np.random.default_rng(6).standard_normal(sys.n)
    traj = simulate_closed_loop(sys, x0, 100)
    V = V_along(rep.certificate.V, rep.certificate.program.K, traj)
    ratio = float(np.linalg.norm(traj.x[100]) / np.linalg.norm(x0))
    rise = float(np.max(np.diff(V)))
    record(6, ratio <= 1e-4 and rise <= 1e-8,
           f"|x_100|/|x_0| = {ratio:.1e} (<= 1e-4), max V increase {rise:.1e} (<= 1e-8)")


def test_c7_l2_gain():
    t = time.perf_counter()
    bound, _ = bound_l2_gain(scalar_disturbed(0.5))
    dt = time.perf_counter() - t
    oracle = l2_gain_by_frequency(0.5)
    err = abs(bound - oracle) / oracle if bound is not None else np.inf
    record(7, err <= 0.05 and dt < 5,
           f"sqrt(gamma) = {bound:.6f} vs frequency oracle {oracle:.6f}, rel err {err:.1e}, {dt:.2f} s")


def test_c8_telescoping(half, bench_runs):
    rng = np.random.default_rng(8)
    N = 100
    worst = np.inf
    cases = [(half[0], half[1], half[2].certificate)]
    cases += [(sys, rep.certificate.program.K, rep.certificate) for sys, rep, _ in bench_runs.values()
              if rep.certificate is not None]
    for sys, K, cert in cases:
        for _ in range(20):
            x0 = 3.0 * rng.standard_normal(sys.n)
            worst = min(worst, telescoping_gap(cert, K, sys, x0, N) + N * 1e-6)
    record(8, worst >= 0 and len(cases) == 6,
           f"{len(cases)} certified instances x 20 x0, min V(x0) + N*1e-6 - sum |x_k|^2 = {worst:.3e} (>= 0)")


def test_c9_solver():
    rng = np.random.default_rng(9)
    worst_res = 0.0
    worst_dual = 0.0
    statuses = set()
    round_trip = True
    for _ in range(100):
        prob = random_sdp(rng, int(rng.integers(1, 20)), random_sizes(rng))
        sol = solve(prob)
        statuses.add(sol.status)
        worst_res = max(worst_res, max(residuals(prob, sol.x, sol.y)))
        for it in sol.log:
            scale = 1 + abs(it["pobj"]) + abs(it["dobj"])
            worst_dual = max(worst_dual, (it["dobj"] - it["pobj"]) / scale)
        text = export_sdpa(prob)
        round_trip &= export_sdpa(import_sdpa(text)) == text
    ok = statuses == {"optimal"} and worst_res <= 1e-8 and round_trip and worst_dual <= 1e-8
    record(9, ok, f"100 SDPs: statuses {sorted(statuses)}, max residual {worst_res:.1e} (<= 1e-8), "
                  f"SDPA round trip {'identical' if round_trip else 'differs'}, "
                  f"max relative dual-minus-primal {worst_dual:.1e}")


def test_c10_iss():
    rep = verify_iss(scalar_disturbed(0.5))
    pinned = verify_iss(scalar_disturbed(0.5, q=[w_pinned_to_zero]))
    ok = (rep.verdict == "certified-ISS" and rep.gamma is not None and np.isfinite(rep.gamma)
          and pinned.verdict == "certified-robust-GAS" and pinned.gamma == 0.0)
    record(10, ok, f"x+ = 0.5x + w: {rep.verdict} gamma = {rep.gamma:.4g}; w pinned to 0: {pinned.verdict} "
                   f"gamma = {pinned.gamma}")
