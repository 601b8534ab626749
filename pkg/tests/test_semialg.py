import numpy as np
import pytest

from nnsos.nnmodel import Activation, NeuralNetwork, nn_forward_with_lifts, random_network
from nnsos.polycore import Group, Polynomial, StructuralError
from nnsos.semialg import ClosedLoopSystem, DisturbedSystem, EquilibriumWarning, build_K, build_Kw

from helpers import scalar_disturbed, w_pinned_to_zero


def single_relu():
    return NeuralNetwork.from_layers([(np.array([[1.0]]), np.zeros(1), Activation.relu())])


def test_single_relu_space_bookkeeping():
    K = build_K(ClosedLoopSystem.linear([[0.5]], [[1.0]], single_relu()))
    assert K.space.names == ["x1", "u1", "x1+", "u1+"]
    assert K.h_tags.count("dynamics") == 1
    assert K.n_lam == 0


def test_Kw_adds_disturbance_rows():
    Kw = build_Kw(scalar_disturbed(0.5, q=[w_pinned_to_zero]))
    assert "w1" in Kw.space.names and "w1+" in Kw.space.names
    assert Kw.g_tags.count("disturbance") == 1
    assert len(Kw.f_y) == 1
    Kw2 = build_Kw(scalar_disturbed(0.5, q=[w_pinned_to_zero]), impose_q_successor=True)
    assert Kw2.g_tags.count("disturbance+") == 1


def trajectory_points(sys, K, X, W=None):
    U, L = nn_forward_with_lifts(sys.net, X)
    Xn = sys.step(X) if W is None else sys.step(X, W)
    Un, Ln = nn_forward_with_lifts(sys.net, Xn)
    return K.pack(X, U, L, Xn, Un, Ln, W, None)


@pytest.mark.parametrize("act", [Activation.relu(), Activation.leaky(0.3), Activation.sat()],
                         ids=lambda a: a.kind)
def test_K_contains_true_transitions(act):
    rng = np.random.default_rng(0)
    raw = random_network(rng, 2, 1, [4], [act])
    net = NeuralNetwork.from_layers([(layer.W, np.zeros(len(layer.b)), layer.act) for layer in raw.layers])
    sys = ClosedLoopSystem.linear(0.5 * rng.standard_normal((2, 2)), rng.standard_normal((2, 1)), net)
    K = build_K(sys)
    pts = trajectory_points(sys, K, 3 * rng.standard_normal((300, 2)))
    assert np.all(K.contains(pts, tol=1e-9))
    bad = pts.copy()
    bad[:, K.space.index("x1+")] += 0.1
    assert not np.any(K.contains(bad, tol=1e-9))


def test_Kw_contains_disturbed_transitions():
    rng = np.random.default_rng(1)
    dsys = scalar_disturbed(0.7)
    Kw = build_Kw(dsys)
    X, W = rng.standard_normal((100, 1)), rng.standard_normal((100, 1))
    assert np.all(Kw.contains(trajectory_points(dsys, Kw, X, W)))


def test_polynomial_dynamics_are_accepted():
    from nnsos.polycore import VariableSpace
    sp = VariableSpace.build(1, 1)
    x, u = Polynomial.var(sp, "x1"), Polynomial.var(sp, "u1")
    sys = ClosedLoopSystem(1, 1, (0.5 * x - 0.1 * x ** 3 + u,), single_relu())
    assert sys.step(np.array([1.0]))[0] == pytest.approx(0.5 - 0.1 + 1.0)
    K = build_K(sys)
    assert max(p.degree() for p in K.h) == 3


def test_nonzero_equilibrium_warns():
    net = NeuralNetwork.from_layers([(np.array([[1.0]]), np.array([1.0]), Activation.relu())])
    with pytest.warns(EquilibriumWarning):
        ClosedLoopSystem.linear([[0.5]], [[1.0]], net)


def test_dimension_checks():
    with pytest.raises(StructuralError):
        ClosedLoopSystem.linear(np.eye(2), np.ones((2, 1)), single_relu())
    d = DisturbedSystem.linear_disturbed([[0.5]], [[1.0]], [[1.0]], [[1.0]], single_relu())
    with pytest.raises(StructuralError):
        DisturbedSystem(1, 1, d.f, d.net, n_w=1, f_y=d.f_y, q=())


def test_anchor_is_the_rest_point():
    K = build_K(ClosedLoopSystem.linear([[0.5]], [[1.0]], single_relu()))
    assert np.allclose(K.anchor_point(), 0.0)
    assert K.space.group_indices(Group.X) == [0]
