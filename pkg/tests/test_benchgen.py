import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nnsos.benchgen import BenchError, converges, random_instance, spectral_norm, streams


def jacobi_singular_values(M: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """One-sided Jacobi: orthogonalise column pairs until all are mutually orthogonal."""
    U = np.array(M, dtype=float, copy=True)
    if U.shape[0] < U.shape[1]:
        U = U.T.copy()
    n = U.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                a, b = U[:, p] @ U[:, p], U[:, q] @ U[:, q]
                c = U[:, p] @ U[:, q]
                if abs(c) <= 1e-15 * np.sqrt(a * b) or c == 0.0:
                    continue
                off = max(off, abs(c) / np.sqrt(a * b))
                zeta = (b - a) / (2 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta ** 2)) if zeta != 0 else 1.0
                cs = 1 / np.sqrt(1 + t ** 2)
                sn = cs * t
                up, uq = U[:, p].copy(), U[:, q].copy()
                U[:, p], U[:, q] = cs * up - sn * uq, sn * up + cs * uq
        if off < 1e-15:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def test_spectral_norm_examples():
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-12)
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)
    assert spectral_norm(np.zeros((2, 3))) == 0.0


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8))
def test_spectral_norm_matches_jacobi_oracle(seed, r, c):
    M = np.random.default_rng(seed).standard_normal((r, c))
    assert spectral_norm(M) == pytest.approx(jacobi_singular_values(M)[0], rel=1e-8)


def test_jacobi_oracle_self_check():
    M = np.diag([5.0, 2.0, 0.5]) @ np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
    assert np.allclose(jacobi_singular_values(M), [5.0, 2.0, 0.5])


def test_streams_are_independent_and_reproducible():
    a, b = streams(7), streams(7)
    assert np.array_equal(a["A"].normal(10), b["A"].normal(10))
    assert not np.array_equal(streams(7)["A"].normal(10), streams(7)["B"].normal(10))
    assert not np.array_equal(streams(7, 0)["A"].normal(10), streams(7, 1)["A"].normal(10))


def test_normal_stream_moments():
    z = streams(3)["W1"].normal(200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1.0) < 0.01


@pytest.mark.parametrize("n,k,seed", [(3, 5, 1), (4, 8, 2), (1, 3, 4)])
def test_instance_contract(n, k, seed):
    inst = random_instance(n, k, seed)
    A, B, W1, W2 = inst.pre
    assert abs(spectral_norm(A) - 0.9) <= 1e-9
    for M in (B, W1, W2):
        assert abs(spectral_norm(M) - 1.0) <= 1e-9
    assert set(np.unique(B / np.max(B))) <= {0.0, 1.0}
    if n > 1:
        assert spectral_norm(inst.A) > 1.0
        assert np.linalg.cond(inst.T) <= 1e3
    Ti = np.linalg.inv(inst.T)
    assert np.allclose(inst.A, inst.T @ A @ Ti) and np.allclose(inst.W1, W1 @ Ti)
    x0s = np.random.default_rng(0).standard_normal((20, n))
    assert converges(inst.A, inst.B, inst.W1, inst.W2, x0s)


def test_instance_is_bitwise_deterministic():
    a, b = random_instance(4, 6, 9), random_instance(4, 6, 9)
    for x, y in zip((a.A, a.B, a.W1, a.W2, a.T), (b.A, b.B, b.W1, b.W2, b.T)):
        assert x.tobytes() == y.tobytes()
    assert a.dumps() == b.dumps()
    assert random_instance(4, 6, 10).A.tobytes() != a.A.tobytes()


def test_transformed_loop_matches_original():
    inst = random_instance(3, 4, 5)
    x = np.random.default_rng(1).standard_normal(3)
    z = inst.T @ x
    pre, post = inst.pre_system(), inst.system()
    for _ in range(10):
        x, z = pre.step(x), post.step(z)
        assert np.allclose(inst.T @ x, z)


def test_argument_checks():
    with pytest.raises(ValueError):
        random_instance(0, 3, 1)
    with pytest.raises(ValueError):
        random_instance(2, 3, 1, a_norm=1.2)
    assert issubclass(BenchError, RuntimeError)
