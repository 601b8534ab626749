import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nnsos.nnmodel import (Activation, NeuralNetwork, encode_network, membership_check, nn_forward,
                           nn_forward_with_lifts, random_network, sat_to_relu)
from nnsos.polycore import StructuralError

ACTS = [Activation.relu(), Activation.leaky(0.2), Activation.sat(), Activation.identity()]


def single(act):
    return NeuralNetwork.from_layers([(np.array([[1.0]]), np.zeros(1), act)])


def test_single_neuron_forward():
    relu, sat = single(Activation.relu()), single(Activation.sat())
    assert nn_forward(relu, [-2.0])[0] == 0.0
    assert nn_forward(relu, [3.0])[0] == 3.0
    assert [nn_forward(sat, [v])[0] for v in (5.0, -5.0, 0.3)] == [1.0, -1.0, 0.3]


def test_zero_weight_network_outputs_last_bias():
    net = NeuralNetwork.from_layers([(np.zeros((3, 2)), np.ones(3), Activation.relu()),
                                     (np.zeros((2, 3)), np.array([0.7, -1.1]), Activation.identity())])
    X = np.random.default_rng(0).standard_normal((20, 2))
    assert np.all(nn_forward(net, X) == np.array([0.7, -1.1]))


def test_dimension_mismatch():
    with pytest.raises(StructuralError):
        nn_forward(single(Activation.relu()), [1.0, 2.0])


def test_relu_membership_examples():
    enc = encode_network(single(Activation.relu()))
    assert membership_check(enc, [-1.0], [0.0], [])
    assert membership_check(enc, [2.0], [2.0], [])
    assert not membership_check(enc, [2.0], [0.0], [])


def test_sat_membership_rejects_off_graph_points():
    enc = encode_network(single(Activation.sat()))
    u, lam = nn_forward_with_lifts(single(Activation.sat()), np.array([2.5]))
    assert membership_check(enc, [2.5], u, lam)
    assert not membership_check(enc, [2.5], [0.5], lam)
    assert not membership_check(enc, [2.5], u, lam + 0.1)


def test_leaky_slope_validated():
    with pytest.raises(StructuralError):
        Activation.leaky(1.5)


@pytest.mark.parametrize("act", ACTS, ids=lambda a: a.kind)
def test_encoding_contains_graph(act):
    rng = np.random.default_rng(1)
    net = random_network(rng, 3, 2, [4, 5], [act, act])
    enc = encode_network(net)
    X = 3 * rng.standard_normal((1000, 3))
    U, L = nn_forward_with_lifts(net, X)
    assert np.all(membership_check(enc, X, U, L, tol=1e-9))


@pytest.mark.parametrize("act", ACTS[:3], ids=lambda a: a.kind)
def test_encoding_excludes_perturbed_outputs(act):
    # for fixed x the encoded set is exactly the graph: moving u off psi(x) leaves it
    rng = np.random.default_rng(2)
    net = random_network(rng, 2, 1, [3], [act])
    enc = encode_network(net)
    X = rng.standard_normal((200, 2))
    U, L = nn_forward_with_lifts(net, X)
    assert not np.any(membership_check(enc, X, U + 0.05, L, tol=1e-9))


def test_sat_to_relu_examples():
    net = sat_to_relu([[0.5]])
    assert nn_forward(net, [4.0])[0] == pytest.approx(1.0)
    for D in ([[0.5]], [[-3.0]], np.eye(3)):
        n = np.atleast_2d(D).shape[0]
        assert np.allclose(nn_forward(sat_to_relu(D), np.zeros(n)), 0.0)
    assert sat_to_relu([[2.0]]).is_relu


def test_json_round_trip():
    rng = np.random.default_rng(3)
    net = random_network(rng, 2, 2, [3, 3], [Activation.leaky(0.1), Activation.sat(-2.0, 0.5)])
    back = NeuralNetwork.from_json(net.to_json())
    X = rng.standard_normal((10, 2))
    assert np.array_equal(nn_forward(back, X), nn_forward(net, X))
    with pytest.raises(StructuralError):
        NeuralNetwork.from_json({"layers": [{"W": [[1.0]], "b": [0.0], "act": "tanh"}]})


@given(st.integers(0, 10_000), st.sampled_from(ACTS), st.integers(1, 3), st.integers(1, 6))
def test_membership_of_forward_pass(seed, act, depth, width):
    rng = np.random.default_rng(seed)
    n_in, n_out = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    net = random_network(rng, n_in, n_out, [width] * depth, [act] * depth)
    X = 5 * rng.standard_normal((50, n_in))
    U, L = nn_forward_with_lifts(net, X)
    assert np.all(membership_check(encode_network(net), X, U, L, tol=1e-9))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_sat_to_relu_matches_saturation(seed, n):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, n))
    X = 3 * rng.standard_normal((40, n))
    assert np.allclose(nn_forward(sat_to_relu(D), X), np.clip(X @ D.T, -1, 1), atol=1e-12)
