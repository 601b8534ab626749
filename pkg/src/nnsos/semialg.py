"""Closed-loop systems and the coupled constraint sets K and K_w."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nnmodel import NeuralNetwork, encode_network, nn_forward_with_lifts
from .polycore import Group, Polynomial, StructuralError, VariableSpace, substitute


class EquilibriumWarning(UserWarning):
    pass


def _base_space(n: int, m: int, n_w: int = 0) -> VariableSpace:
    return VariableSpace.build(n, m, 0, n_w)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """x+ = f(x, u) with u = psi(x).  ``f`` lives in the space (x, u)."""

    n: int
    m: int
    f: tuple
    net: NeuralNetwork

    def __post_init__(self):
        f = tuple(self.f)
        object.__setattr__(self, "f", f)
        if len(f) != self.n:
            raise StructuralError(f"f has {len(f)} components, expected {self.n}")
        if self.net.input_dim != self.n or self.net.output_dim != self.m:
            raise StructuralError("network dimensions do not match (n, m)")
        space = f[0].space
        if any(p.space != space for p in f):
            raise StructuralError("all components of f must share one variable space")
        r = self.residual_at_origin()
        if r > 1e-9:
            warnings.warn(f"origin is not an equilibrium: |f(0, psi(0))| = {r:.3g}",
                          EquilibriumWarning, stacklevel=3)

    @property
    def space(self) -> VariableSpace:
        return self.f[0].space

    def residual_at_origin(self) -> float:
        return float(np.max(np.abs(self.step(np.zeros(self.n))))) if self.n else 0.0

    def _ctrl_point(self, X: np.ndarray, U: np.ndarray, Wd: np.ndarray | None = None) -> np.ndarray:
        sp = self.space
        pts = np.zeros((X.shape[0], len(sp)))
        pts[:, sp.group_indices(Group.X)] = X
        if self.m:
            pts[:, sp.group_indices(Group.U)] = U
        if Wd is not None and Wd.shape[1]:
            pts[:, sp.group_indices(Group.W)] = Wd
        return pts

    def step(self, x, w=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        U = np.atleast_2d(nn_forward_with_lifts(self.net, X)[0])
        Wd = None if w is None else np.atleast_2d(np.asarray(w, dtype=float))
        pts = self._ctrl_point(X, U, Wd)
        out = np.column_stack([p.evaluate_batch(pts) for p in self.f])
        return out[0] if x.ndim == 1 else out

    @classmethod
    def linear(cls, A, B, net: NeuralNetwork) -> "ClosedLoopSystem":
        """x+ = A x + B u."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        n, m = A.shape[0], B.shape[1]
        space = _base_space(n, m)
        f = []
        for i in range(n):
            coeffs = {j: A[i, j] for j in range(n)}
            coeffs.update({n + j: B[i, j] for j in range(m)})
            f.append(Polynomial.affine(space, coeffs))
        return cls(n, m, tuple(f), net)


@dataclass(frozen=True)
class DisturbedSystem(ClosedLoopSystem):
    """x+ = f(x, u, w), y = f_y(x), w in {w : q(x, u, w) >= 0}."""

    n_w: int = 1
    f_y: tuple = ()
    q: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "f_y", tuple(self.f_y))
        object.__setattr__(self, "q", tuple(self.q))
        if not self.q:
            raise StructuralError("disturbance set q must be nonempty (use the constant 1 for no restriction)")
        sp = self.f[0].space if self.f else None
        if sp is not None and len(sp.group_indices(Group.W)) != self.n_w:
            raise StructuralError("disturbance dimension does not match the variable space")
        if any(p.space != sp for p in (*self.f_y, *self.q)):
            raise StructuralError("f, f_y and q must share one variable space")
        super().__post_init__()

    def residual_at_origin(self) -> float:
        return float(np.max(np.abs(self.step(np.zeros(self.n), np.zeros(self.n_w)))))

    def step(self, x, w=None) -> np.ndarray:
        if w is None:
            w = np.zeros(self.n_w) if np.asarray(x).ndim == 1 else np.zeros((np.asarray(x).shape[0], self.n_w))
        return super().step(x, w)

    def output(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        pts = self._ctrl_point(X, np.zeros((X.shape[0], self.m)), np.zeros((X.shape[0], self.n_w)))
        out = np.column_stack([p.evaluate_batch(pts) for p in self.f_y]) if self.f_y else np.zeros((X.shape[0], 0))
        return out[0] if x.ndim == 1 else out

    @classmethod
    def linear_disturbed(cls, A, B, E, C, net: NeuralNetwork, q: Sequence | None = None
                         ) -> "DisturbedSystem":
        """x+ = A x + B u + E w, y = C x; ``q`` is a list of callables space -> Polynomial."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        E = np.atleast_2d(np.asarray(E, dtype=float))
        C = np.atleast_2d(np.asarray(C, dtype=float))
        n, m, r = A.shape[0], B.shape[1], E.shape[1]
        space = _base_space(n, m, r)
        f = []
        for i in range(n):
            coeffs = {j: A[i, j] for j in range(n)}
            coeffs.update({n + j: B[i, j] for j in range(m)})
            coeffs.update({n + m + j: E[i, j] for j in range(r)})
            f.append(Polynomial.affine(space, coeffs))
        fy = [Polynomial.affine(space, {j: C[i, j] for j in range(n)}) for i in range(C.shape[0])]
        qs = [qq(space) for qq in q] if q else [Polynomial.constant(space, 1.0)]
        return cls(n, m, tuple(f), net, n_w=r, f_y=tuple(fy), q=tuple(qs))


@dataclass(frozen=True)
class ConstraintSet:
    """Basic semialgebraic set {g >= 0, h = 0}; tags say where each row came from."""

    space: VariableSpace
    g: tuple
    h: tuple
    g_tags: tuple
    h_tags: tuple
    kind: str
    n: int
    m: int
    n_lam: int
    n_w: int = 0
    f_y: tuple = field(default=())
    anchor: tuple = field(default=())  # a point of the space where the loop sits at rest

    def anchor_point(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float) if self.anchor else np.zeros(len(self.space))

    def __post_init__(self):
        for p in (*self.g, *self.h, *self.f_y):
            if p.space != self.space:
                raise StructuralError("constraint lives in the wrong variable space")

    def select(self, *tags: str) -> tuple[list[Polynomial], list[Polynomial]]:
        g = [p for p, t in zip(self.g, self.g_tags) if t in tags]
        h = [p for p, t in zip(self.h, self.h_tags) if t in tags]
        return g, h

    def evaluate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values of every g and h at the rows of ``pts``."""
        G = np.column_stack([p.evaluate_batch(pts) for p in self.g]) if self.g else np.zeros((len(pts), 0))
        H = np.column_stack([p.evaluate_batch(pts) for p in self.h]) if self.h else np.zeros((len(pts), 0))
        return G, H

    def contains(self, pts: np.ndarray, tol: float = 1e-8) -> np.ndarray:
        G, H = self.evaluate(np.atleast_2d(pts))
        return np.all(G >= -tol, axis=1) & np.all(np.abs(H) <= tol, axis=1)

    def pack(self, x, u, lam, xp, up, lamp, w=None, wp=None) -> np.ndarray:
        """Dense points of ``space`` from per-group arrays (rows are points)."""
        sp = self.space
        cols = [(Group.X, x), (Group.U, u), (Group.LAM, lam), (Group.XP, xp), (Group.UP, up),
                (Group.LAMP, lamp), (Group.W, w), (Group.WP, wp)]
        npts = np.atleast_2d(np.asarray(x)).shape[0]
        pts = np.zeros((npts, len(sp)))
        for grp, val in cols:
            idx = sp.group_indices(grp)
            if idx and val is not None:
                pts[:, idx] = np.atleast_2d(np.asarray(val, dtype=float)).reshape(npts, len(idx))
        return pts


def _lift_into(p: Polynomial, sys_space: VariableSpace, target: VariableSpace, successor: bool = False
               ) -> Polynomial:
    """Re-home a polynomial over (x, u[, w]) into ``target`` (optionally onto successor groups)."""
    mapping = {}
    for grp in (Group.X, Group.U, Group.W):
        src = sys_space.group_indices(grp)
        dst = target.group_indices(grp.successor if successor else grp)
        if len(src) != len(dst) and src:
            raise StructuralError(f"group {grp.value} has mismatched sizes")
        mapping.update({s: Polynomial.var(target, d) for s, d in zip(src, dst)})
    return substitute(p, mapping, target) if mapping else Polynomial(target, dict(p.terms))


def _assemble(sys: ClosedLoopSystem, n_w: int, kind: str):
    net = sys.net
    space = VariableSpace.build(sys.n, sys.m, net.lift_count, n_w, successor=True)
    cur = encode_network(net, space, "current")
    nxt = encode_network(net, space, "successor")
    g = list(cur.g) + list(nxt.g)
    g_tags = ["current"] * len(cur.g) + ["successor"] * len(nxt.g)
    h = list(cur.h) + list(nxt.h)
    h_tags = ["current"] * len(cur.h) + ["successor"] * len(nxt.h)
    xp = space.group_indices(Group.XP)
    for j, fj in enumerate(sys.f):
        h.append(Polynomial.var(space, xp[j]) - _lift_into(fj, sys.space, space))
        h_tags.append("dynamics")
    return space, g, g_tags, h, h_tags


def _anchor(sys: ClosedLoopSystem, space: VariableSpace, n_w: int) -> tuple:
    """(0, psi(0), lifts(0), x1, psi(x1), lifts(x1), 0, 0) with x1 = f(0, psi(0))."""
    x0 = np.zeros(sys.n)
    u0, l0 = nn_forward_with_lifts(sys.net, x0)
    x1 = sys.step(x0) if n_w == 0 else sys.step(x0, np.zeros(n_w))
    u1, l1 = nn_forward_with_lifts(sys.net, x1)
    pt = np.zeros(len(space))
    for grp, val in ((Group.X, x0), (Group.U, u0), (Group.LAM, l0), (Group.XP, x1), (Group.UP, u1),
                     (Group.LAMP, l1)):
        idx = space.group_indices(grp)
        if idx:
            pt[idx] = val
    return tuple(float(v) for v in pt)


def build_K(sys: ClosedLoopSystem) -> ConstraintSet:
    space, g, gt, h, ht = _assemble(sys, 0, "K")
    return ConstraintSet(space, tuple(g), tuple(h), tuple(gt), tuple(ht), "K",
                         sys.n, sys.m, sys.net.lift_count, anchor=_anchor(sys, space, 0))


def build_Kw(dsys: DisturbedSystem, impose_q_successor: bool = False) -> ConstraintSet:
    """K_w; with ``impose_q_successor`` the disturbance set also constrains w+ (extension)."""
    space, g, gt, h, ht = _assemble(dsys, dsys.n_w, "K_w")
    for qi in dsys.q:
        g.append(_lift_into(qi, dsys.space, space))
        gt.append("disturbance")
    if impose_q_successor:
        for qi in dsys.q:
            g.append(_lift_into(qi, dsys.space, space, successor=True))
            gt.append("disturbance+")
    fy = tuple(_lift_into(p, dsys.space, space) for p in dsys.f_y)
    return ConstraintSet(space, tuple(g), tuple(h), tuple(gt), tuple(ht), "K_w",
                         dsys.n, dsys.m, dsys.net.lift_count, dsys.n_w, fy,
                         anchor=_anchor(dsys, space, dsys.n_w))
