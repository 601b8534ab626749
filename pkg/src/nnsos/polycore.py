"""Sparse multivariate polynomials over an explicitly managed variable space.

A monomial is a tuple of ``(variable_index, exponent)`` pairs sorted by
variable index, with no zero exponents.  The empty tuple is the constant
monomial.  Polynomials are immutable maps from monomials to float
coefficients and always carry the :class:`VariableSpace` they live in.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple  # tuple[tuple[int, int], ...]

ZERO_THRESHOLD = 1e-14


class StructuralError(ValueError):
    """Raised on variable-space mismatches or missing assignments."""


class Group(str, enum.Enum):
    X = "x"
    U = "u"
    LAM = "lam"
    XP = "x+"
    UP = "u+"
    LAMP = "lam+"
    W = "w"
    WP = "w+"

    @property
    def successor(self) -> "Group":
        return _SUCCESSOR.get(self, self)

    @property
    def is_successor(self) -> bool:
        return self in _SUCCESSOR.values()


_SUCCESSOR = {Group.X: Group.XP, Group.U: Group.UP, Group.LAM: Group.LAMP, Group.W: Group.WP}
CURRENT_GROUPS = (Group.X, Group.U, Group.LAM, Group.W)


@dataclass(frozen=True)
class VariableSpace:
    """Ordered, immutable list of named variables, each tagged with a group."""

    variables: tuple  # tuple[tuple[str, Group], ...]

    def __post_init__(self):
        names = [n for n, _ in self.variables]
        if len(set(names)) != len(names):
            raise StructuralError("variable names must be unique")
        object.__setattr__(self, "variables", tuple((n, Group(g)) for n, g in self.variables))
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def build(cls, n: int, m: int = 0, n_lam: int = 0, n_w: int = 0,
              successor: bool = False) -> "VariableSpace":
        """Canonical space: x1..xn, u1..um, l1..lk, w1..wr, then successors (``x1+`` ...)."""
        if n < 1:
            raise StructuralError("state dimension must be at least 1")
        spec = [(Group.X, "x", n), (Group.U, "u", m), (Group.LAM, "l", n_lam), (Group.W, "w", n_w)]
        out = [(f"{p}{i + 1}", g) for g, p, k in spec for i in range(k)]
        if successor:
            out += [(f"{p}{i + 1}+", g.successor) for g, p, k in spec for i in range(k)]
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.variables]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise StructuralError(f"unknown variable {name!r}") from None

    def group_indices(self, *groups: Group) -> list[int]:
        gs = {Group(g) for g in groups}
        return [i for i, (_, g) in enumerate(self.variables) if g in gs]

    def group_names(self, group: Group) -> list[str]:
        return [self.variables[i][0] for i in self.group_indices(group)]

    def group_of(self, index: int) -> Group:
        return self.variables[index][1]

    def successor_map(self) -> dict[int, int]:
        """Index map from every current-group variable to its successor twin."""
        out = {}
        for g in CURRENT_GROUPS:
            cur, nxt = self.group_indices(g), self.group_indices(g.successor)
            if nxt and len(cur) == len(nxt):
                out.update(zip(cur, nxt))
        return out


# ---------------------------------------------------------------------------
# monomials


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        va, ea = a[i]
        vb, eb = b[j]
        if va == vb:
            out.append((va, ea + eb))
            i += 1
            j += 1
        elif va < vb:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_key(m: Monomial):
    """Graded-lexicographic sort key (x1 > x2 > ...)."""
    return (mono_degree(m), tuple((v, -e) for v, e in m))


def mono_from_exponents(exps: Sequence[int], indices: Sequence[int] | None = None) -> Monomial:
    if indices is None:
        indices = range(len(exps))
    pairs = sorted((int(i), int(e)) for i, e in zip(indices, exps) if e)
    if any(e < 0 for _, e in pairs):
        raise StructuralError("negative exponent")
    return tuple(pairs)


def mono_rename(m: Monomial, mapping: Mapping[int, int]) -> Monomial:
    return tuple(sorted((mapping.get(v, v), e) for v, e in m))


# ---------------------------------------------------------------------------
# polynomials


class Polynomial:
    """Immutable sparse polynomial with float coefficients."""

    __slots__ = ("space", "_terms", "_compiled")

    def __init__(self, space: VariableSpace, terms: Mapping[Monomial, float] | None = None,
                 normalize: bool = True):
        self.space = space
        terms = dict(terms or {})
        if normalize:
            terms = _normalized(terms)
        self._terms = terms
        self._compiled = None

    # construction helpers
    @classmethod
    def zero(cls, space: VariableSpace) -> "Polynomial":
        return cls(space, {}, normalize=False)

    @classmethod
    def constant(cls, space: VariableSpace, value: float) -> "Polynomial":
        return cls(space, {(): float(value)})

    @classmethod
    def var(cls, space: VariableSpace, name: str | int) -> "Polynomial":
        idx = name if isinstance(name, int) else space.index(name)
        return cls(space, {((idx, 1),): 1.0}, normalize=False)

    @classmethod
    def affine(cls, space: VariableSpace, coeffs: Mapping[int, float], const: float = 0.0) -> "Polynomial":
        terms = {((int(i), 1),): float(c) for i, c in coeffs.items() if c != 0.0}
        if const:
            terms[()] = float(const)
        return cls(space, terms)

    @property
    def terms(self) -> Mapping[Monomial, float]:
        return MappingProxyType(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms.items())

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((mono_degree(m) for m in self._terms), default=-1)

    def coef(self, m: Monomial) -> float:
        return self._terms.get(m, 0.0)

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def variables(self) -> set[int]:
        return {v for m in self._terms for v, _ in m}

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self._terms.items(), key=lambda t: mono_key(t[0]))

    # arithmetic
    def _check(self, other: "Polynomial"):
        if other.space is not self.space and other.space != self.space:
            raise StructuralError("polynomials live in different variable spaces")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.space, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return poly_add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.space, {m: -c for m, c in self._terms.items()}, normalize=False)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return poly_add(self, -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return poly_mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(self.space, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self.space, {m: s * c for m, c in self._terms.items()})

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.space == other.space and self._terms == other._terms

    __hash__ = None

    def allclose(self, other: "Polynomial", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        self._check(other)
        diff = poly_add(self, -other, normalize=False)
        scale = max(self.max_abs_coef(), other.max_abs_coef(), 1e-300)
        return all(abs(c) <= atol + rtol * scale for c in diff._terms.values())

    def __repr__(self) -> str:
        return f"Polynomial({self.to_str()})"

    def to_str(self, digits: int = 6) -> str:
        if not self._terms:
            return "0"
        names = self.space.names
        parts = []
        for m, c in reversed(self.sorted_terms()):
            mono = "*".join(names[v] if e == 1 else f"{names[v]}^{e}" for v, e in m)
            parts.append(f"{c:.{digits}g}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    # evaluation
    def __call__(self, point: Mapping[str, float]) -> float:
        return poly_eval(self, point)

    def _compile(self):
        if self._compiled is None:
            mons = list(self._terms)
            coefs = np.array([self._terms[m] for m in mons], dtype=float)
            self._compiled = (mons, coefs)
        return self._compiled

    def evaluate_batch(self, values: np.ndarray) -> np.ndarray:
        """Evaluate at many points; ``values`` has shape (npts, len(space))."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        mons, coefs = self._compile()
        out = np.zeros(values.shape[0])
        for m, c in zip(mons, coefs):
            t = np.full(values.shape[0], c)
            for v, e in m:
                t = t * (values[:, v] if e == 1 else values[:, v] ** e)
            out += t
        return out

    def evaluate_vector(self, values: Sequence[float]) -> float:
        """Evaluate at a dense point aligned with the space."""
        total = 0.0
        for m, c in self._terms.items():
            t = c
            for v, e in m:
                t *= values[v] ** e
            total += t
        return total

    # misc
    def rename(self, mapping: Mapping[int, int]) -> "Polynomial":
        return Polynomial(self.space, {mono_rename(m, mapping): c for m, c in self._terms.items()},
                          normalize=False)

    def prune(self, rel: float) -> "Polynomial":
        """Drop terms below ``rel`` times the largest coefficient."""
        cut = rel * self.max_abs_coef()
        return Polynomial(self.space, {m: c for m, c in self._terms.items() if abs(c) > cut},
                          normalize=False)

    def to_json(self, all_vars: bool = False) -> dict:
        used = sorted(self.variables()) if not all_vars else list(range(len(self.space)))
        pos = {v: k for k, v in enumerate(used)}
        terms = []
        for m, c in self.sorted_terms():
            exps = [0] * len(used)
            for v, e in m:
                exps[pos[v]] = e
            terms.append({"exps": exps, "coef": float(c)})
        return {"vars": [self.space.names[v] for v in used], "terms": terms}

    @classmethod
    def from_json(cls, space: VariableSpace, data: Mapping, rename: Mapping[str, str] | None = None
                  ) -> "Polynomial":
        rename = rename or {}
        try:
            idx = [space.index(rename.get(n, n)) for n in data["vars"]]
            terms: dict = {}
            for t in data["terms"]:
                exps = t["exps"]
                if len(exps) != len(idx):
                    raise StructuralError("exponent vector length does not match 'vars'")
                m = mono_from_exponents(exps, idx)
                terms[m] = terms.get(m, 0.0) + float(t["coef"])
        except (KeyError, TypeError) as exc:
            raise StructuralError(f"malformed polynomial JSON: {exc}") from exc
        return cls(space, terms)


def _normalized(terms: dict) -> dict:
    if not terms:
        return terms
    cmax = max(abs(c) for c in terms.values())
    cut = ZERO_THRESHOLD * cmax
    return {m: float(c) for m, c in terms.items() if abs(c) > cut}


def poly_add(a: Polynomial, b: Polynomial, normalize: bool = True) -> Polynomial:
    a._check(b)
    out = dict(a._terms)
    for m, c in b._terms.items():
        out[m] = out.get(m, 0.0) + c
    return Polynomial(a.space, out, normalize=normalize)


def poly_sum(polys: Iterable[Polynomial], space: VariableSpace) -> Polynomial:
    out: dict = {}
    for p in polys:
        if p.space != space:
            raise StructuralError("polynomials live in different variable spaces")
        for m, c in p._terms.items():
            out[m] = out.get(m, 0.0) + c
    return Polynomial(space, out)


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    a._check(b)
    out: dict = {}
    for ma, ca in a._terms.items():
        for mb, cb in b._terms.items():
            m = mono_mul(ma, mb)
            out[m] = out.get(m, 0.0) + ca * cb
    return Polynomial(a.space, out)


def poly_eval(p: Polynomial, point: Mapping[str, float]) -> float:
    names = p.space.names
    total = 0.0
    for m, c in p._terms.items():
        t = c
        for v, e in m:
            try:
                t *= float(point[names[v]]) ** e
            except KeyError:
                raise StructuralError(f"no value for variable {names[v]!r}") from None
        total += t
    return total


def substitute_affine(p: Polynomial, assignments: Mapping, target: VariableSpace | None = None
                      ) -> Polynomial:
    """Replace every variable of ``p`` by an affine polynomial in ``target``.

    ``assignments`` maps variable names (or indices) of ``p.space`` to
    polynomials of degree <= 1.  Variables of ``p`` without an assignment are
    an error unless ``target`` is ``p.space`` itself, in which case they are
    kept as they are.
    """
    target = target or p.space
    amap: dict[int, Polynomial] = {}
    for k, v in assignments.items():
        idx = k if isinstance(k, int) else p.space.index(k)
        if not isinstance(v, Polynomial):
            v = Polynomial.constant(target, float(v))
        if v.space != target:
            raise StructuralError("assignment lives in the wrong variable space")
        if v.degree() > 1:
            raise StructuralError("substitute_affine needs affine assignments")
        amap[idx] = v
    keep_missing = target == p.space
    return _substitute(p, amap, target, keep_missing)


def substitute(p: Polynomial, assignments: Mapping[int, Polynomial], target: VariableSpace | None = None
               ) -> Polynomial:
    """General polynomial substitution by variable index (unassigned variables are kept)."""
    target = target or p.space
    return _substitute(p, dict(assignments), target, keep_missing=True)


def _substitute(p: Polynomial, amap: dict, target: VariableSpace, keep_missing: bool) -> Polynomial:
    powers: dict[tuple[int, int], Polynomial] = {}

    def power(v: int, e: int) -> Polynomial:
        key = (v, e)
        if key not in powers:
            if v in amap:
                base = amap[v]
            elif keep_missing:
                base = Polynomial(target, {((v, 1),): 1.0}, normalize=False)
            else:
                raise StructuralError(f"no assignment for variable {p.space.names[v]!r}")
            powers[key] = base if e == 1 else poly_mul(power(v, e - 1), base)
        return powers[key]

    out: dict = {}
    for m, c in p._terms.items():
        term = {(): c}
        for v, e in m:
            f = power(v, e)._terms
            nxt: dict = {}
            for ma, ca in term.items():
                for mb, cb in f.items():
                    mm = mono_mul(ma, mb)
                    nxt[mm] = nxt.get(mm, 0.0) + ca * cb
            term = nxt
        for mm, cc in term.items():
            out[mm] = out.get(mm, 0.0) + cc
    return Polynomial(target, out)


def divide_by_substitution(p: Polynomial, var: int, expr: Polynomial) -> tuple[Polynomial, Polynomial]:
    """Write ``p = (x_var - expr) * quotient + remainder`` with ``remainder = p|_{x_var = expr}``.

    ``expr`` must not contain ``x_var``.
    """
    if var in expr.variables():
        raise StructuralError("expression must not contain the eliminated variable")
    space = p.space
    by_deg: dict[int, dict] = {}
    for m, c in p._terms.items():
        d = 0
        rest = []
        for v, e in m:
            if v == var:
                d = e
            else:
                rest.append((v, e))
        by_deg.setdefault(d, {})
        by_deg[d][tuple(rest)] = by_deg[d].get(tuple(rest), 0.0) + c
    if not by_deg:
        return Polynomial.zero(space), Polynomial.zero(space)
    top = max(by_deg)
    e_pow = [Polynomial.constant(space, 1.0)]
    for _ in range(top):
        e_pow.append(poly_mul(e_pow[-1], expr))
    v_pow = [Polynomial.constant(space, 1.0)]
    x = Polynomial.var(space, var)
    for _ in range(top):
        v_pow.append(poly_mul(v_pow[-1], x))
    rem: dict = {}
    quo: dict = {}
    for d, coeffs in by_deg.items():
        cpoly = Polynomial(space, coeffs, normalize=False)
        for m, c in poly_mul(cpoly, e_pow[d])._terms.items():
            rem[m] = rem.get(m, 0.0) + c
        if d == 0:
            continue
        inner: dict = {}
        for i in range(d):
            for m, c in poly_mul(v_pow[i], e_pow[d - 1 - i])._terms.items():
                inner[m] = inner.get(m, 0.0) + c
        for m, c in poly_mul(cpoly, Polynomial(space, inner, normalize=False))._terms.items():
            quo[m] = quo.get(m, 0.0) + c
    return Polynomial(space, quo), Polynomial(space, rem)


def monomial_basis(space: VariableSpace, groups: Iterable[Group] | None, max_degree: int,
                   min_degree: int = 0, indices: Sequence[int] | None = None) -> list[Monomial]:
    """All monomials of total degree in [min_degree, max_degree] in the selected variables.

    Graded-lexicographic order; ``binom(k + d, d)`` entries for ``k`` variables when
    ``min_degree == 0``.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    if indices is None:
        indices = space.group_indices(*groups) if groups is not None else list(range(len(space)))
    idx = sorted(indices)
    out = []
    for d in range(min_degree, max_degree + 1):
        for combo in combinations_with_replacement(idx, d):
            m: dict[int, int] = {}
            for v in combo:
                m[v] = m.get(v, 0) + 1
            out.append(tuple(sorted(m.items())))
    out.sort(key=mono_key)
    return out


def basis_size(k: int, d: int) -> int:
    return math.comb(k + d, d)
