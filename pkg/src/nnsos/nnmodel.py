"""Feed-forward networks, their forward pass, and semialgebraic graph encodings.

Every hidden neuron gets one lift variable holding its post-activation value.
Saturation neurons get a second lift ``mu = max(p - hi, 0)`` which makes the
graph a basic semialgebraic set.  Lift layout per hidden layer: the layer's
outputs first, then the extra saturation lifts.  A nonlinear output layer
uses ``u`` as its post-activation and only adds the saturation extras.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polycore import Group, Polynomial, StructuralError, VariableSpace


@dataclass(frozen=True)
class Activation:
    kind: str  # relu | leaky | sat | id
    alpha: float = 0.0
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "leaky", "sat", "id"):
            raise StructuralError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky" and not 0.0 < self.alpha < 1.0:
            raise StructuralError("leaky ReLU slope must lie in (0, 1)")
        if self.kind == "sat" and not self.lo < self.hi:
            raise StructuralError("saturation needs lo < hi")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def leaky(cls, alpha: float) -> "Activation":
        return cls("leaky", alpha=float(alpha))

    @classmethod
    def sat(cls, lo: float = -1.0, hi: float = 1.0) -> "Activation":
        return cls("sat", lo=float(lo), hi=float(hi))

    @classmethod
    def identity(cls) -> "Activation":
        return cls("id")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(t, 0.0)
        if self.kind == "leaky":
            return np.maximum(t, self.alpha * t)
        if self.kind == "sat":
            return np.minimum(np.maximum(t, self.lo), self.hi)
        return t

    @property
    def extra_lifts(self) -> bool:
        return self.kind == "sat"

    def to_json(self):
        if self.kind == "leaky":
            return {"leaky": self.alpha}
        if self.kind == "sat":
            return {"sat": [self.lo, self.hi]}
        return self.kind

    @classmethod
    def from_json(cls, data) -> "Activation":
        if isinstance(data, str):
            if data in ("relu", "id"):
                return cls(data)
            if data == "sat":
                return cls.sat()
            raise StructuralError(f"unknown activation {data!r}")
        if isinstance(data, dict) and len(data) == 1:
            (k, v), = data.items()
            if k == "leaky":
                return cls.leaky(v)
            if k == "sat":
                return cls.sat(*v)
        raise StructuralError(f"malformed activation {data!r}")


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: Activation

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if W.shape[0] != b.shape[0]:
            raise StructuralError(f"layer bias has length {b.shape[0]}, expected {W.shape[0]}")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class NeuralNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise StructuralError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].W.shape[1] != layers[i - 1].W.shape[0]:
                raise StructuralError(
                    f"layer {i + 1} expects {layers[i].W.shape[1]} inputs, "
                    f"previous layer has {layers[i - 1].W.shape[0]} outputs")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_layers(cls, spec: Sequence[tuple]) -> "NeuralNetwork":
        return cls(tuple(Layer(W, b, a) for W, b, a in spec))

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def lift_layout(self) -> list[tuple[int, int, int]]:
        """Per layer: (offset of outputs or -1, offset of extra lifts or -1, width)."""
        out = []
        k = 0
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            width = layer.W.shape[0]
            o = -1
            if i < last:
                o = k
                k += width
            e = -1
            if layer.act.extra_lifts:
                e = k
                k += width
            out.append((o, e, width))
        return out

    @property
    def lift_count(self) -> int:
        n = 0
        for i, layer in enumerate(self.layers):
            if i < len(self.layers) - 1:
                n += layer.W.shape[0]
            if layer.act.extra_lifts:
                n += layer.W.shape[0]
        return n

    @property
    def is_relu(self) -> bool:
        """True when every activation is ReLU or identity (the case covered by the boundedness result)."""
        return all(l.act.kind in ("relu", "id") for l in self.layers)

    def to_json(self) -> dict:
        return {"layers": [{"W": l.W.tolist(), "b": l.b.tolist(), "act": l.act.to_json()}
                           for l in self.layers]}

    @classmethod
    def from_json(cls, data) -> "NeuralNetwork":
        if isinstance(data, str):
            data = json.loads(data)
        try:
            layers = data["layers"]
            return cls(tuple(Layer(l["W"], l["b"], Activation.from_json(l.get("act", "id")))
                             for l in layers))
        except (KeyError, TypeError, ValueError) as exc:
            raise StructuralError(f"malformed network JSON: {exc}") from exc


def nn_forward_with_lifts(net: NeuralNetwork, x) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass returning ``(u, lam)``; accepts one point or a batch (rows)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.input_dim:
        raise StructuralError(f"input has dimension {X.shape[1]}, network expects {net.input_dim}")
    lifts = []
    h = X
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        p = h @ layer.W.T + layer.b
        h = layer.act(p)
        if i < last:
            lifts.append(h)
        if layer.act.extra_lifts:
            lifts.append(np.maximum(p - layer.act.hi, 0.0))
    lam = np.hstack(lifts) if lifts else np.zeros((X.shape[0], 0))
    if single:
        return h[0], lam[0]
    return h, lam


def nn_forward(net: NeuralNetwork, x) -> np.ndarray:
    return nn_forward_with_lifts(net, x)[0]


@dataclass(frozen=True)
class GraphEncoding:
    space: VariableSpace
    g: tuple
    h: tuple
    lift_count: int
    x_idx: tuple
    u_idx: tuple
    lam_idx: tuple
    labels_g: tuple = field(default=())
    labels_h: tuple = field(default=())

    def point(self, x, u, lam) -> np.ndarray:
        """Dense point(s) in ``space`` with the given x, u, lam (other variables zero)."""
        x, u, lam = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, u, lam))
        npts = max(x.shape[0], u.shape[0], lam.shape[0])
        pt = np.zeros((npts, len(self.space)))
        pt[:, list(self.x_idx)] = x
        if self.u_idx:
            pt[:, list(self.u_idx)] = u
        if self.lam_idx:
            pt[:, list(self.lam_idx)] = lam
        return pt


def _affine(space: VariableSpace, W: np.ndarray, b: np.ndarray, idx: Sequence[int]) -> list[Polynomial]:
    return [Polynomial.affine(space, {idx[j]: W[r, j] for j in range(W.shape[1])}, b[r])
            for r in range(W.shape[0])]


def _neuron_constraints(act: Activation, v: Polynomial, p: Polynomial, mu: Polynomial | None):
    """(g, h) for one neuron with output v and preactivation p."""
    if act.kind == "relu":
        return [v - p, v], [v * (v - p)]
    if act.kind == "leaky":
        return [v - p, v - act.alpha * p], [(v - p) * (v - act.alpha * p)]
    if act.kind == "sat":
        slack = v - p + mu
        return ([v - act.lo, act.hi - v, slack, mu],
                [(v - act.hi) * mu, (v - act.lo) * slack])
    return [], [v - p]


def encode_network(net: NeuralNetwork, space: VariableSpace | None = None,
                   group: str = "current") -> GraphEncoding:
    """Graph encoding of ``net`` inside ``space`` (built canonically when omitted).

    ``group`` selects the current (x, u, lam) or successor (x+, u+, lam+) variables.
    """
    if space is None:
        space = VariableSpace.build(net.input_dim, net.output_dim, net.lift_count,
                                    successor=(group == "successor"))
    gx, gu, gl = (Group.X, Group.U, Group.LAM)
    if group == "successor":
        gx, gu, gl = gx.successor, gu.successor, gl.successor
    elif group != "current":
        raise ValueError("group must be 'current' or 'successor'")
    x_idx = space.group_indices(gx)
    u_idx = space.group_indices(gu)
    lam_idx = space.group_indices(gl)
    if len(x_idx) != net.input_dim or len(u_idx) != net.output_dim or len(lam_idx) != net.lift_count:
        raise StructuralError("variable space does not match the network dimensions")
    g: list = []
    h: list = []
    lg: list = []
    lh: list = []
    prev = x_idx
    last = len(net.layers) - 1
    for i, ((o, e, width), layer) in enumerate(zip(net.lift_layout(), net.layers)):
        pre = _affine(space, layer.W, layer.b, prev)
        out_idx = u_idx if i == last else lam_idx[o:o + width]
        for r in range(width):
            v = Polynomial.var(space, out_idx[r])
            mu = Polynomial.var(space, lam_idx[e + r]) if e >= 0 else None
            gi, hi = _neuron_constraints(layer.act, v, pre[r], mu)
            g += gi
            h += hi
            lg += [f"layer{i + 1}.n{r + 1}.{layer.act.kind}"] * len(gi)
            lh += [f"layer{i + 1}.n{r + 1}.{layer.act.kind}"] * len(hi)
        prev = out_idx
    return GraphEncoding(space, tuple(g), tuple(h), net.lift_count, tuple(x_idx), tuple(u_idx),
                         tuple(lam_idx), tuple(lg), tuple(lh))


def membership_check(enc: GraphEncoding, x, u, lam, tol: float = 1e-9):
    """True iff every g >= -tol and |h| <= tol; vectorised over rows of a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = enc.point(x, u, lam)
    ok = np.ones(pts.shape[0], dtype=bool)
    for p in enc.g:
        ok &= p.evaluate_batch(pts) >= -tol
    for p in enc.h:
        ok &= np.abs(p.evaluate_batch(pts)) <= tol
    return bool(ok[0]) if single else ok


def sat_to_relu(D) -> NeuralNetwork:
    """Two-layer ReLU network computing sat(Dx) = ReLU(Dx + 1) - ReLU(Dx - 1) - 1."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n = D.shape[0]
    if D.shape != (n, n):
        raise StructuralError("D must be square")
    I = np.eye(n)
    one = np.ones(n)
    return NeuralNetwork((
        Layer(np.vstack([D, D]), np.concatenate([one, -one]), Activation.relu()),
        Layer(np.hstack([I, -I]), -one, Activation.identity()),
    ))


def random_network(rng: np.random.Generator, n_in: int, n_out: int, hidden: Sequence[int],
                   acts: Sequence[Activation], final: Activation | None = None,
                   scale: float = 1.0) -> NeuralNetwork:
    """Gaussian-weight network with the given hidden widths and activations (test/bench helper)."""
    dims = [n_in, *hidden, n_out]
    layers = []
    for i in range(len(dims) - 1):
        W = scale * rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i])
        b = 0.5 * rng.standard_normal(dims[i + 1])
        act = acts[i] if i < len(hidden) else (final or Activation.identity())
        layers.append(Layer(W, b, act))
    return NeuralNetwork(tuple(layers))
