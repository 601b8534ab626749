"""Shared builders for the test modules."""

import numpy as np
import scipy.sparse as sp

from nnsos.nnmodel import Activation, NeuralNetwork
from nnsos.polycore import Polynomial
from nnsos.sdpsolver import Block, SdpProblem, svec
from nnsos.semialg import ClosedLoopSystem, DisturbedSystem


def zero_effect_net() -> NeuralNetwork:
    """One hidden ReLU whose output is multiplied by zero: psi(x) = 0."""
    return NeuralNetwork.from_layers([(np.array([[1.0]]), np.zeros(1), Activation.relu()),
                                      (np.array([[0.0]]), np.zeros(1), Activation.identity())])


def scalar_system(a: float) -> ClosedLoopSystem:
    return ClosedLoopSystem.linear([[a]], [[1.0]], zero_effect_net())


def scalar_disturbed(a: float, c: float = 1.0, q=None) -> DisturbedSystem:
    return DisturbedSystem.linear_disturbed([[a]], [[1.0]], [[1.0]], [[c]], zero_effect_net(), q)


def w_pinned_to_zero(space) -> Polynomial:
    return -Polynomial.var(space, "w1") ** 2


def random_sdp(rng: np.random.Generator, m: int, sizes) -> SdpProblem:
    """Strictly feasible primal and dual by construction: b = A(X0), C = S0 + A^T y0."""
    blocks = [Block(n, k) for n, k in sizes]
    X0, S0, A = [], [], []
    for bl in blocks:
        if bl.kind == "psd":
            G = rng.standard_normal((bl.size, bl.size))
            X0.append(svec(G @ G.T + np.eye(bl.size)))
            G = rng.standard_normal((bl.size, bl.size))
            S0.append(svec(G @ G.T + np.eye(bl.size)))
        elif bl.kind == "lp":
            X0.append(rng.random(bl.size) + 0.5)
            S0.append(rng.random(bl.size) + 0.5)
        else:
            X0.append(rng.standard_normal(bl.size))
            S0.append(np.zeros(bl.size))
        A.append(sp.csr_matrix(rng.standard_normal((m, bl.nvar))))
    y0 = rng.standard_normal(m)
    tmp = SdpProblem(blocks, A, np.zeros(m), check=False)
    b = tmp.apply_A(X0)
    C = [s + a for s, a in zip(S0, tmp.apply_AT(y0))]
    return SdpProblem(blocks, A, b, C)


def random_sizes(rng: np.random.Generator):
    sizes = [(int(rng.integers(1, 12)), "psd") for _ in range(int(rng.integers(1, 4)))]
    if rng.random() < 0.5:
        sizes.append((int(rng.integers(1, 6)), "lp"))
    if rng.random() < 0.3:
        sizes.append((int(rng.integers(1, 3)), "free"))
    return sizes


def l2_gain_by_frequency(a: float, c: float = 1.0) -> float:
    """Peak of |c / (e^{iw} - a)| on a dense frequency grid."""
    w = np.linspace(0.0, np.pi, 20001)
    return float(np.max(np.abs(c) / np.abs(np.exp(1j * w) - a)))
