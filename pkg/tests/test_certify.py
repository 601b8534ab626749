import json

import numpy as np
import pytest

from nnsos.certify import (Certificate, V_along, analyze_l2_gain, bound_l2_gain, gain_gap, simulate_closed_loop,
                           simulate_disturbed, telescoping_gap, trajectory_csv, validate_certificate, verify_iss,
                           verify_stability)
from nnsos.nnmodel import Activation, NeuralNetwork
from nnsos.polycore import Polynomial
from nnsos.semialg import ClosedLoopSystem, build_K
from nnsos.sosbuilder import build_stability_program, complete_multipliers

from helpers import scalar_disturbed, scalar_system, w_pinned_to_zero


@pytest.fixture(scope="module")
def half():
    sys = scalar_system(0.5)
    return sys, build_K(sys), verify_stability(sys)


def test_simulation_examples():
    traj = simulate_closed_loop(scalar_system(0.5), [1.0], 3)
    assert np.allclose(traj.x[:, 0], [1.0, 0.5, 0.25, 0.125])
    assert np.all(simulate_closed_loop(scalar_system(0.5), [0.0], 5).x == 0.0)
    div = simulate_closed_loop(scalar_system(10.0), [1.0], 30)
    assert div.diverged and div.steps < 30


def test_disturbed_simulation_applies_w():
    traj = simulate_disturbed(scalar_disturbed(0.5), [0.0], [[1.0], [0.0], [0.0]])
    assert np.allclose(traj.x[:, 0], [0.0, 1.0, 0.5, 0.25])


def test_scalar_stability_certified(half):
    _, _, rep = half
    assert rep.verdict == "certified-GAS"
    assert rep.validation.passed
    assert rep.simulation["converged"] == rep.simulation["runs"]
    xs = np.linspace(-3, 3, 61)
    K = rep.certificate.program.K
    pts = K.pack(xs[:, None], np.zeros((61, 1)), np.maximum(xs, 0)[:, None], None, None, None)
    pts_half = K.pack(xs[:, None] / 2, np.zeros((61, 1)), np.maximum(xs / 2, 0)[:, None], None, None, None)
    V = rep.certificate.V
    assert np.all(V.evaluate_batch(pts) - V.evaluate_batch(pts_half) >= xs ** 2 - 1e-6)


def hand_certificate(K, V):
    """Zero multipliers everywhere except nonneg.sigma0 = V; eliminated ones by division."""
    prog = build_stability_program(K, V_depends_on="x")
    space = K.space
    mult, grams, scalars = {}, {}, {}
    for name, t in prog.templates.items():
        if name == "V":
            continue
        mult[name] = Polynomial.zero(space)
        if t.kind == "sos":
            basis = [Polynomial(space, {b: 1.0}) for b in t.basis]
            grams[name] = (basis, np.zeros((len(basis), len(basis))))
        elif t.kind == "lp":
            scalars[name] = 0.0
    nonneg = next(i for i in prog.identities if i.name == "nonneg")
    basis, W = grams[nonneg.sigma0]
    x1 = Polynomial.var(space, "x1")
    k = next(i for i, b in enumerate(basis) if b.allclose(x1))
    W[k, k] = V.coef(((space.index("x1"), 2),))
    mult[nonneg.sigma0] = V
    resid = complete_multipliers(prog, V, None, mult)
    return Certificate("stability", V, mult, None, max(resid.values()), 0.0, grams, scalars, prog), resid


def test_hand_built_certificate_passes(half):
    sys, K, _ = half
    V = (4.0 / 3.0) * Polynomial.var(K.space, "x1") ** 2
    cert, resid = hand_certificate(K, V)
    assert max(resid.values()) < 1e-12
    val = validate_certificate(cert, K, sys, tol=1e-6)
    assert val.identity_ok and val.psd_ok and val.sampled_ok


def test_hand_built_certificate_with_too_small_V_fails(half):
    sys, K, _ = half
    V = 1.2 * Polynomial.var(K.space, "x1") ** 2  # below the analytic bound 4/3
    cert, _ = hand_certificate(K, V)
    val = validate_certificate(cert, K, sys)
    assert not val.identity_ok and not val.sampled_ok


def flip(p: Polynomial, k: int) -> Polynomial:
    m = p.sorted_terms()[k][0]
    return Polynomial(p.space, {q: (-c if q == m else c) for q, c in p.terms.items()})


def test_sign_flip_mutations_fail_identity_check(half):
    sys, K, rep = half
    cert = rep.certificate
    for k in range(len(cert.V.terms)):
        assert not validate_certificate(cert.with_V(flip(cert.V, k)), K, sys).identity_ok


def test_gram_mismatch_is_caught(half):
    sys, K, rep = half
    cert = rep.certificate
    name, (basis, W) = next((n, g) for n, g in cert.grams.items() if len(g[0]) > 1)
    bad = dict(cert.grams)
    bad[name] = (basis, W + np.eye(len(basis)))
    forged = Certificate(cert.kind, cert.V, cert.multipliers, cert.gamma, 0.0, 0.0, bad, cert.scalars,
                         cert.program)
    val = validate_certificate(forged, K, sys)
    assert val.identity_ok and not val.psd_ok


@pytest.mark.parametrize("deg_V", [2, 4])
def test_unstable_system_has_no_certificate(deg_V):
    rep = verify_stability(scalar_system(2.0), deg_V=deg_V)
    assert rep.verdict == "no-certificate-at-degree"
    assert rep.certificate is None


def test_saturating_network_verdict_depends_on_V():
    net = NeuralNetwork.from_layers([(np.array([[1.0]]), np.zeros(1), Activation.sat()),
                                     (np.array([[-0.3]]), np.zeros(1), Activation.identity())])
    sys = ClosedLoopSystem.linear([[0.6]], [[1.0]], net)
    rep_x = verify_stability(sys, V_depends_on="x")
    assert rep_x.verdict == "certified-GAS"
    rep_full = verify_stability(sys, V_depends_on="full")
    assert rep_full.validation.passed
    want = "certified-GAS" if rep_full.certificate.V_uses_only_x() else "certified-attractive-only"
    assert rep_full.verdict == want
    if want == "certified-attractive-only":
        assert "not machine-checked" in rep_full.boundedness_note


def test_l2_gain_bound():
    bound, cert = bound_l2_gain(scalar_disturbed(0.5))
    assert bound == pytest.approx(2.0, rel=0.05)
    assert cert.gamma == pytest.approx(bound ** 2)
    ws = np.random.default_rng(0).standard_normal((60, 1))
    assert gain_gap(cert, scalar_disturbed(0.5), ws) >= -1e-6


def test_zero_output_has_zero_gain():
    bound, _ = bound_l2_gain(scalar_disturbed(0.5, c=0.0))
    assert bound == pytest.approx(0.0, abs=1e-3)


def test_iss_verdicts():
    rep = verify_iss(scalar_disturbed(0.5))
    assert rep.verdict == "certified-ISS" and np.isfinite(rep.gamma)
    pinned = verify_iss(scalar_disturbed(0.5, q=[w_pinned_to_zero]))
    assert pinned.verdict == "certified-robust-GAS" and pinned.gamma == 0.0
    assert verify_iss(scalar_disturbed(2.0)).verdict == "no-certificate-at-degree"


def test_telescoping_bound(half):
    sys, K, rep = half
    for x0 in np.random.default_rng(4).standard_normal((10, 1)) * 3:
        assert telescoping_gap(rep.certificate, K, sys, x0, 100) >= -100 * 1e-6


def test_report_json(half):
    _, _, rep = half
    data = json.loads(rep.dumps())
    assert data["verdict"] == "certified-GAS"
    assert set(data["timings"]) >= {"build", "match", "solve", "extract", "validate", "total"}
    again = json.loads(verify_stability(scalar_system(0.5)).dumps())
    data.pop("timings"), again.pop("timings")
    assert data == again


def test_epsilon_margin_is_reported():
    rep = verify_stability(scalar_system(0.5), epsilon=0.5)
    assert rep.verdict == "certified-GAS"
    assert any("epsilon" in n for n in rep.notes)


def test_trajectory_csv(half):
    sys, K, rep = half
    traj = simulate_closed_loop(sys, [2.0], 4)
    text = trajectory_csv(traj, V_along(rep.certificate.V, K, traj))
    lines = text.strip().splitlines()
    assert lines[0] == "k,x1,u1,l1,V" and len(lines) == 6
    V = [float(ln.split(",")[-1]) for ln in lines[1:]]
    assert all(b <= a + 1e-12 for a, b in zip(V, V[1:]))


def test_l2_report_names():
    rep = analyze_l2_gain(scalar_disturbed(2.0))
    assert rep.verdict == "no-bound-at-degree"
