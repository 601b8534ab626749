"""Random stable interconnections x+ = A x + B W2 relu(W1 x) for benchmarking.

Randomness is fully determined by ``seed``.  Stream layout: attempt ``a``
(0, 1, ... while the stability check rejects draws) owns the seed sequence
``SeedSequence(seed, spawn_key=(a,))``, whose five spawned children drive
A, B, W1, W2 and the coordinate transform, in that order.  Each child feeds a
PCG64 bit generator; uniforms are the top 53 bits of its raw 64-bit output,
normals come from the Box-Muller transform of those uniforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nnmodel import Activation, NeuralNetwork
from .semialg import ClosedLoopSystem

MAX_TRANSFORM_TRIES = 100
MAX_ATTEMPTS = 50
_STREAMS = ("A", "B", "W1", "W2", "T")


class BenchError(RuntimeError):
    pass


class Stream:
    """PCG64 stream with explicit uniform and Box-Muller normal generation."""

    def __init__(self, seq: np.random.SeedSequence):
        self.bits = np.random.PCG64(seq)
        self._spare: list[float] = []

    def uniform(self, k: int) -> np.ndarray:
        raw = self.bits.random_raw(k)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normal(self, k: int) -> np.ndarray:
        pairs = (k + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # (0, 1]
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:k]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)

    def bernoulli_matrix(self, rows: int, cols: int, p: float = 0.5) -> np.ndarray:
        return (self.uniform(rows * cols) < p).astype(float).reshape(rows, cols)


def streams(seed: int, attempt: int = 0) -> dict:
    seq = np.random.SeedSequence(seed, spawn_key=(attempt,))
    return {name: Stream(child) for name, child in zip(_STREAMS, seq.spawn(len(_STREAMS)))}


def spectral_norm(M, rtol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    v = np.ones(G.shape[0]) + np.arange(G.shape[0]) * 1e-3  # fixed start, deterministic
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; fall back to a coordinate vector
            v = np.zeros_like(v)
            v[int(np.argmax(np.sum(G * G, axis=0)))] = 1.0
            continue
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    # Rayleigh quotient at the final vector is the most accurate estimate
    return float(np.sqrt(max(float(v @ (G @ v)), 0.0)))


def _normalise(M: np.ndarray, target: float = 1.0) -> np.ndarray:
    s = spectral_norm(M)
    if s == 0.0:
        raise BenchError("drew an all-zero matrix")
    return M * (target / s)


@dataclass(frozen=True)
class BenchInstance:
    """Post-transform data; ``pre`` keeps the untransformed (A, B, W1, W2)."""

    A: np.ndarray
    B: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    T: np.ndarray
    seed: int
    pre: tuple
    attempt: int = 0

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def neurons(self) -> int:
        return self.W1.shape[0]

    def network(self) -> NeuralNetwork:
        return NeuralNetwork.from_layers([(self.W1, np.zeros(self.neurons), Activation.relu()),
                                          (self.W2, np.zeros(self.W2.shape[0]), Activation.identity())])

    def system(self) -> ClosedLoopSystem:
        return ClosedLoopSystem.linear(self.A, self.B, self.network())

    def pre_system(self) -> ClosedLoopSystem:
        A, B, W1, W2 = self.pre
        net = NeuralNetwork.from_layers([(W1, np.zeros(W1.shape[0]), Activation.relu()),
                                         (W2, np.zeros(W2.shape[0]), Activation.identity())])
        return ClosedLoopSystem.linear(A, B, net)

    def system_json(self) -> dict:
        return {"type": "linear", "A": self.A.tolist(), "B": self.B.tolist(),
                "meta": {"seed": self.seed, "n": self.n, "neurons": self.neurons, "attempt": self.attempt,
                         "T": self.T.tolist()}}

    def network_json(self) -> dict:
        return self.network().to_json()

    def dumps(self) -> tuple[str, str]:
        return json.dumps(self.system_json(), indent=1), json.dumps(self.network_json(), indent=1)


def _closed_loop_step(A, B, W1, W2, X):
    return X @ A.T + np.maximum(X @ W1.T, 0.0) @ W2.T @ B.T


def converges(A, B, W1, W2, x0s: np.ndarray, steps: int = 200, ratio: float = 1e-3) -> bool:
    X = np.array(x0s, dtype=float)
    n0 = np.linalg.norm(X, axis=1)
    for _ in range(steps):
        X = _closed_loop_step(A, B, W1, W2, X)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > 1e12:
            return False
    return bool(np.all(np.linalg.norm(X, axis=1) < ratio * n0))


def _transform(A: np.ndarray, st: Stream, r0: float = 0.5, max_cond: float = 1e3):
    n = A.shape[0]
    for _ in range(MAX_TRANSFORM_TRIES):
        R = st.normal_matrix(n, n)
        sR = spectral_norm(R)
        if sR == 0.0:
            continue
        r = r0
        while r <= 64.0:
            T = np.eye(n) + (r / sR) * R
            if np.linalg.cond(T) > max_cond:
                break
            At = T @ A @ np.linalg.inv(T)
            if spectral_norm(At) > 1.0:
                return T
            r *= 2.0
    raise BenchError(f"no transform with ||T A T^-1|| > 1 after {MAX_TRANSFORM_TRIES} tries")


def random_instance(n: int, neurons: int, seed: int, m: int | None = None, a_norm: float = 0.9,
                    check_samples: int = 100) -> BenchInstance:
    if n < 1 or neurons < 1:
        raise ValueError("n and neurons must be >= 1")
    if not 0.0 < a_norm < 1.0:
        raise ValueError("a_norm must lie in (0, 1)")
    m = n if m is None else m
    for attempt in range(MAX_ATTEMPTS):
        s = streams(seed, attempt)
        A = _normalise(s["A"].normal_matrix(n, n), a_norm)
        Bm = s["B"].bernoulli_matrix(n, m)
        if not np.any(Bm):
            continue
        B = _normalise(Bm)
        W1 = _normalise(s["W1"].normal_matrix(neurons, n))
        W2 = _normalise(s["W2"].normal_matrix(m, neurons))
        x0s = s["T"].normal_matrix(check_samples, n)
        if not converges(A, B, W1, W2, x0s):
            continue
        try:
            T = _transform(A, s["T"]) if n > 1 else None
        except BenchError as exc:
            raise BenchError(f"seed {seed}: {exc}") from exc
        if T is None:
            # a 1x1 similarity cannot change |A|; the stress property does not apply
            T = np.eye(1)
        Ti = np.linalg.inv(T)
        inst = BenchInstance(T @ A @ Ti, T @ B, W1 @ Ti, W2.copy(), T, seed, (A, B, W1, W2), attempt)
        return inst
    raise BenchError(f"seed {seed}: no stable draw in {MAX_ATTEMPTS} attempts")
