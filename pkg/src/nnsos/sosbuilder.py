"""SOS programs for Lyapunov and dissipation certificates over K and K_w.

Every certificate condition is a polynomial identity::

    lhs(decisions) = sigma0 + sum_i sigma_i g_i + sum_j p_j h_j

matched monomial by monomial.  Affine equalities among the h_j (dynamics of a
linear plant, identity layers, the output layer of a network) are eliminated
exactly before matching: a polynomial that vanishes on an affine subspace
lies in the ideal of the defining affine forms, with a quotient of one degree
less, so nothing is lost.  Their multipliers are rebuilt afterwards by
polynomial division.

Each identity is also expressed in coordinates centred at the rest point of
the loop (``ConstraintSet.anchor``).  With a network bias the rest point is
not the origin, and a Gram basis containing the constant monomial is then
forced onto a face of the PSD cone; recentring keeps that face aligned with
the coordinate axes so facial pruning can remove it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .polycore import (Group, Monomial, Polynomial, StructuralError, divide_by_substitution,
                       mono_mul, monomial_basis, poly_mul, substitute)
from .sdpsolver import Block, SdpProblem
from .sdpsolver.problem import tri_index, triu
from .semialg import ConstraintSet

_PIVOT_RANK = {Group.XP: 0, Group.UP: 1, Group.U: 2, Group.LAMP: 3, Group.LAM: 4, Group.WP: 5, Group.W: 6,
               Group.X: 7}
_G_ROLE = {"current": "sigma1", "successor": "sigma2", "disturbance": "sigmaq", "disturbance+": "sigmaq+"}
_H_ROLE = {"current": "p1", "successor": "p2", "dynamics": "p3"}

CONST_KEY = -1


class PlanError(ValueError):
    """Degree plan inconsistent with the constraint set."""


class StructurallyInfeasible(Exception):
    """A matched coefficient row reads ``0 = c`` with ``c != 0``."""

    def __init__(self, identity: str, monomial: str, rhs: float):
        super().__init__(f"identity {identity!r}: monomial {monomial} cannot be matched (0 = {rhs:.3g})")
        self.identity = identity
        self.monomial = monomial
        self.rhs = rhs


# ---------------------------------------------------------------------------
# degree plan


def _even_floor(d: int) -> int:
    return max(0, d - (d % 2))


@dataclass(frozen=True)
class DegreePlan:
    deg_V: int
    target: int
    g_degrees: tuple
    h_degrees: tuple

    def to_json(self) -> dict:
        return {"deg_V": self.deg_V, "target": self.target, "g_degrees": list(self.g_degrees),
                "h_degrees": list(self.h_degrees)}


def plan_degrees(K: ConstraintSet, deg_V: int = 2, target: int | None = None) -> DegreePlan:
    """Multiplier degrees so that every product has degree at most ``target``.

    The default target is the larger of ``deg_V`` and the even ceiling of the
    largest constraint (or squared output) degree.
    """
    if deg_V < 1:
        raise PlanError("deg_V must be at least 1")
    degs = [p.degree() for p in (*K.g, *K.h)]
    degs += [2 * p.degree() for p in K.f_y]
    cmax = max(degs, default=0)
    if target is None:
        target = max(deg_V, cmax + (cmax % 2))
    if target < deg_V:
        raise PlanError(f"target degree {target} is below deg_V = {deg_V}")
    if target < cmax:
        raise PlanError(f"target degree {target} is below the largest constraint degree {cmax}")
    g_deg = tuple(_even_floor(target - p.degree()) for p in K.g)
    h_deg = tuple(target - p.degree() for p in K.h)
    return DegreePlan(deg_V, target, g_deg, h_deg)


# ---------------------------------------------------------------------------
# decision templates


@dataclass
class GramBlock:
    name: str
    basis: tuple  # half basis, local (recentred) coordinates
    offset: int  # decision id of entry (0, 0); entries follow in triu order

    @property
    def size(self) -> int:
        return len(self.basis)

    def entry_id(self, i: int, j: int) -> int:
        return self.offset + tri_index(i, j, self.size)


@dataclass
class SosTemplate:
    """Unknown polynomial: ``free`` / ``lp`` coefficients on ``basis`` or a Gram form."""

    name: str
    kind: str  # "free" | "lp" | "sos"
    basis: tuple
    ids: tuple = ()
    gram: int | None = None


@dataclass
class Identity:
    """One matched identity and everything needed to rebuild it in original coordinates."""

    name: str
    variables: tuple  # indices of the space involved
    kept: tuple
    pivots: tuple  # eliminated variables, in elimination order
    phi: dict  # pivot -> affine Polynomial in kept variables (original coordinates)
    T: np.ndarray  # (pivot forms) = T @ (eliminated equalities)
    eliminated: tuple  # (h index, multiplier name) for the eliminated equalities
    lhs_known: Polynomial
    lhs_V: tuple  # (sign, "current" | "successor")
    lhs_gamma: Polynomial | None
    products: tuple  # (template name, "g" | "h", constraint index)
    sigma0: str
    dropped: tuple = ()  # constant nonnegative g rows left out (redundant with sigma0)

    def multiplier_names(self) -> list[str]:
        return [self.sigma0] + [t for t, _, _ in self.products] + [nm for _, nm in self.eliminated]


@dataclass
class Lowering:
    """How SDP columns map back to decision ids."""

    columns: dict  # decision id -> (block index, local position, factor)
    zero: frozenset  # decision ids fixed to zero by facial pruning
    gram_kept: dict  # gram index -> kept basis positions
    blocks: list
    row_labels: list
    pruned_rows: int = 0


@dataclass
class SosProgram:
    kind: str  # "stability" | "l2gain" | "iss"
    K: ConstraintSet
    plan: DegreePlan
    V_vars: tuple
    options: dict = field(default_factory=dict)
    kinds: list = field(default_factory=list)
    grams: list = field(default_factory=list)
    gram_entry: dict = field(default_factory=dict)  # id -> (gram, i, j)
    templates: dict = field(default_factory=dict)
    identities: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # per identity: {monomial: {id: coef}}
    gamma_id: int | None = None
    lowering: Lowering | None = None

    @property
    def space(self):
        return self.K.space

    @property
    def shift(self) -> np.ndarray:
        return self.K.anchor_point()

    # allocation
    def _ids(self, kind: str, k: int) -> tuple:
        start = len(self.kinds)
        self.kinds.extend([kind] * k)
        return tuple(range(start, start + k))

    def add_free(self, name: str, basis) -> SosTemplate:
        basis = tuple(basis)
        t = SosTemplate(name, "free", basis, self._ids("free", len(basis)))
        self.templates[name] = t
        return t

    def add_sos(self, name: str, half_basis) -> SosTemplate:
        half_basis = tuple(half_basis)
        if half_basis == ((),):
            t = SosTemplate(name, "lp", ((),), self._ids("lp", 1))
        else:
            gi = len(self.grams)
            n = len(half_basis)
            ids = self._ids("gram", n * (n + 1) // 2)
            blk = GramBlock(name, half_basis, ids[0])
            ii, jj = triu(n)
            for k, a, b in zip(ids, ii, jj):
                self.gram_entry[k] = (gi, int(a), int(b))
            self.grams.append(blk)
            t = SosTemplate(name, "sos", half_basis, ids, gi)
        self.templates[name] = t
        return t

    def add_scalar(self, name: str) -> SosTemplate:
        t = SosTemplate(name, "lp", ((),), self._ids("lp", 1))
        self.templates[name] = t
        return t

    @property
    def n_decisions(self) -> int:
        return len(self.kinds)

    def describe(self) -> dict:
        return {"kind": self.kind, "decisions": self.n_decisions,
                "gram_sizes": [g.size for g in self.grams],
                "identities": [i.name for i in self.identities],
                "eliminated": {i.name: len(i.pivots) for i in self.identities},
                "rows": sum(len(r) for r in self.rows), "plan": self.plan.to_json()}


# ---------------------------------------------------------------------------
# elimination of affine equalities


def _eliminate(space, eqs: list, variables: list):
    """Gauss-Jordan on affine equalities with pivot preference by group.

    Returns ``(pivots, phi, T, used)`` where row r of the reduced system reads
    ``xi_{pivots[r]} - phi[pivots[r]] = sum_j T[r, j] eqs[j]``.
    """
    k = len(eqs)
    if k == 0:
        return (), {}, np.zeros((0, 0)), []
    col = {v: i for i, v in enumerate(variables)}
    M = np.zeros((k, len(variables) + 1))
    for r, p in enumerate(eqs):
        for m, c in p:
            if m == ():
                M[r, -1] = c
            else:
                M[r, col[m[0][0]]] = c
    T = np.eye(k)
    rank = np.array([_PIVOT_RANK.get(space.group_of(v), 8) for v in variables])
    free_rows = list(range(k))
    pivots: list[tuple[int, int]] = []
    taken = np.zeros(len(variables), dtype=bool)
    while free_rows:
        best = None
        for r in free_rows:
            row = np.abs(M[r, :-1])
            row[taken] = 0.0
            mx = row.max() if row.size else 0.0
            if mx <= 1e-12 * max(1.0, np.abs(M[r]).max()):
                continue
            cand = np.flatnonzero(row >= 0.1 * mx)
            c = cand[np.lexsort((-row[cand], rank[cand]))[0]]
            key = (rank[c], -row[c])
            if best is None or key < best[0]:
                best = (key, r, c)
        if best is None:
            break
        _, r, c = best
        piv = M[r, c]
        M[r] /= piv
        T[r] /= piv
        for q in range(k):
            if q != r and M[q, c] != 0.0:
                f = M[q, c]
                M[q] -= f * M[r]
                T[q] -= f * T[r]
                M[q, c] = 0.0
        free_rows.remove(r)
        taken[c] = True
        pivots.append((r, c))
    for r in free_rows:
        if abs(M[r, -1]) > 1e-9 * max(1.0, np.abs(M[r]).max()):
            raise StructuralError("affine equality constraints are inconsistent")
    out_piv, phi, rows = [], {}, []
    for r, c in pivots:
        v = variables[c]
        coeffs = {variables[j]: -M[r, j] for j in range(len(variables)) if j != c and M[r, j] != 0.0}
        phi[v] = Polynomial.affine(space, coeffs, -M[r, -1])
        out_piv.append(v)
        rows.append(r)
    return tuple(out_piv), phi, T[rows], rows


# ---------------------------------------------------------------------------
# accumulation of matched rows


class _Rows:
    def __init__(self):
        self.rows: dict = {}

    def add(self, mono: Monomial, key: int, coef: float):
        row = self.rows.get(mono)
        if row is None:
            row = self.rows[mono] = {}
        row[key] = row.get(key, 0.0) + coef

    def add_poly(self, poly: Polynomial, key: int, scale: float = 1.0, shift_mono: Monomial = ()):
        for m, c in poly:
            self.add(mono_mul(shift_mono, m) if shift_mono else m, key, scale * c)

    def add_template(self, prog: SosProgram, t: SosTemplate, poly: Polynomial, sign: float):
        """rows += sign * t * poly."""
        if t.kind in ("free", "lp"):
            for b, vid in zip(t.basis, t.ids):
                self.add_poly(poly, vid, sign, b)
            return
        basis = t.basis
        n = len(basis)
        ii, jj = triu(n)
        for vid, a, b in zip(t.ids, ii, jj):
            w = sign if a == b else 2.0 * sign
            self.add_poly(poly, vid, w, mono_mul(basis[a], basis[b]))


def _local_map(space, ident_vars, kept, phi, shift) -> dict:
    """Original variable -> polynomial in local (recentred, reduced) coordinates."""
    out = {}
    for v in kept:
        out[v] = Polynomial.affine(space, {v: 1.0}, float(shift[v]))
    back = {v: out[v] for v in kept}
    for p, expr in phi.items():
        out[p] = substitute(expr, back, space)
    return out


def _image(poly: Polynomial, amap: dict) -> Polynomial:
    return substitute(poly, amap, poly.space)


class _PowerCache:
    def __init__(self, args: dict):
        self.args = args
        self.cache: dict = {}

    def mono(self, m: Monomial) -> Polynomial:
        out = None
        for v, e in m:
            key = (v, e)
            f = self.cache.get(key)
            if f is None:
                f = self.args[v] if e == 1 else poly_mul(self.mono(((v, e - 1),)), self.args[v])
                self.cache[key] = f
            out = f if out is None else poly_mul(out, f)
        return out if out is not None else Polynomial.constant(next(iter(self.args.values())).space, 1.0)


# ---------------------------------------------------------------------------
# program construction


def _check_V_depends(kind: str, V_depends_on: str):
    if V_depends_on not in ("x", "full"):
        raise ValueError(f"V_depends_on must be 'x' or 'full', got {V_depends_on!r}")


def _V_vars(K: ConstraintSet, V_depends_on: str) -> tuple:
    groups = (Group.X,) if V_depends_on == "x" else (Group.X, Group.U, Group.LAM, Group.W)
    return tuple(K.space.group_indices(*groups))


def _V_basis(K: ConstraintSet, V_vars, deg_V: int, x_degree_min: int) -> list:
    basis = monomial_basis(K.space, None, deg_V, min_degree=1, indices=V_vars)
    if x_degree_min:
        xs = set(K.space.group_indices(Group.X))
        basis = [m for m in basis if sum(e for v, e in m if v in xs) >= x_degree_min]
    return basis


def _add_identity(prog: SosProgram, name: str, g_idx: list, h_idx: list, lhs_known: Polynomial,
                  lhs_V: tuple, lhs_gamma: Polynomial | None, eliminate: bool):
    K, space, plan = prog.K, prog.K.space, prog.plan
    smap = space.successor_map()
    shift = prog.shift
    V = prog.templates["V"]
    # variables touched by this identity
    vs = set(lhs_known.variables())
    for sign, which in lhs_V:
        vs.update(prog.V_vars if which == "current" else (smap[v] for v in prog.V_vars))
    if lhs_gamma is not None:
        vs.update(lhs_gamma.variables())
    g_use, dropped = [], []
    for i in g_idx:
        p = K.g[i]
        if p.degree() <= 0 and p.coef(()) >= 0:
            dropped.append(i)
            continue
        g_use.append(i)
        vs.update(p.variables())
    for j in h_idx:
        vs.update(K.h[j].variables())
    variables = sorted(vs)
    # affine equalities
    lin = [j for j in h_idx if eliminate and K.h[j].degree() == 1] if eliminate else []
    pivots, phi, T, used = _eliminate(space, [K.h[j] for j in lin], variables)
    # every eliminated equality, including dependent ones, is dropped from the products
    elim_names = tuple((j, f"{name}.{_H_ROLE[K.h_tags[j]]}[{j}]") for j in lin)
    T_full = np.zeros((len(pivots), len(lin)))
    if len(pivots):
        T_full[:, :] = T
    kept = tuple(v for v in variables if v not in phi)
    amap = _local_map(space, variables, kept, phi, shift)
    rows = _Rows()
    # V terms: V(xi) = V'(xi - s) with the current-block shift
    for sign, which in lhs_V:
        args = {}
        for v in prog.V_vars:
            src = v if which == "current" else smap[v]
            args[v] = amap[src] - float(shift[v])
        cache = _PowerCache(args)
        for b, vid in zip(V.basis, V.ids):
            rows.add_poly(cache.mono(b), vid, sign)
    for m, c in _image(lhs_known, amap):
        rows.add(m, CONST_KEY, c)
    if lhs_gamma is not None:
        rows.add_poly(_image(lhs_gamma, amap), prog.gamma_id, 1.0)
    half = plan.target // 2
    s0 = prog.add_sos(f"{name}.sigma0", monomial_basis(space, None, half, indices=kept))
    rows.add_template(prog, s0, Polynomial.constant(space, 1.0), -1.0)
    products = []
    for i in g_use:
        d = plan.g_degrees[i]
        tn = f"{name}.{_G_ROLE[K.g_tags[i]]}[{i}]"
        t = prog.add_sos(tn, monomial_basis(space, None, d // 2, indices=kept))
        rows.add_template(prog, t, _image(K.g[i], amap), -1.0)
        products.append((tn, "g", i))
    for j in h_idx:
        if j in lin:
            continue
        d = plan.h_degrees[j]
        tn = f"{name}.{_H_ROLE[K.h_tags[j]]}[{j}]"
        t = prog.add_free(tn, monomial_basis(space, None, d, indices=kept))
        rows.add_template(prog, t, _image(K.h[j], amap), -1.0)
        products.append((tn, "h", j))
    ident = Identity(name, tuple(variables), kept, pivots, phi, T_full, elim_names, lhs_known, tuple(lhs_V),
                     lhs_gamma, tuple(products), s0.name, tuple(dropped))
    prog.identities.append(ident)
    prog.rows.append(rows.rows)
    return ident


def _sq_norm(polys) -> Polynomial | None:
    out = None
    for p in polys:
        q = p * p
        out = q if out is None else out + q
    return out


def _sq_vars(space, group: Group) -> Polynomial:
    return _sq_norm([Polynomial.var(space, i) for i in space.group_indices(group)])


def build_stability_program(K: ConstraintSet, plan: DegreePlan | None = None, V_depends_on: str = "full",
                            epsilon: float = 1.0, eliminate: bool = True) -> SosProgram:
    """Decrease ``V - V+ - eps |x|^2`` and nonnegativity of V, both certified on K.

    ``epsilon`` scales the decrease margin; 1 is the standard condition, other
    values are a relaxation and are reported as such.
    """
    _check_V_depends("stability", V_depends_on)
    plan = plan or plan_degrees(K)
    prog = SosProgram("stability", K, plan, _V_vars(K, V_depends_on),
                      {"V_depends_on": V_depends_on, "epsilon": float(epsilon), "eliminate": eliminate})
    prog.add_free("V", _V_basis(K, prog.V_vars, plan.deg_V, 0))
    space = K.space
    xx = _sq_vars(space, Group.X)
    all_g, all_h = list(range(len(K.g))), list(range(len(K.h)))
    _add_identity(prog, "decrease", all_g, all_h, xx.scale(-epsilon),
                  ((1.0, "current"), (-1.0, "successor")), None, eliminate)
    cur_g = [i for i, t in enumerate(K.g_tags) if t == "current"]
    cur_h = [j for j, t in enumerate(K.h_tags) if t == "current"]
    _add_identity(prog, "nonneg", cur_g, cur_h, Polynomial.zero(space), ((1.0, "current"),), None, eliminate)
    return prog


def _disturbed_program(kind: str, Kw: ConstraintSet, plan, V_depends_on, eliminate, with_gamma: bool):
    if Kw.kind != "K_w":
        raise StructuralError("this certificate needs the disturbed constraint set K_w")
    _check_V_depends(kind, V_depends_on)
    plan = plan or plan_degrees(Kw)
    prog = SosProgram(kind, Kw, plan, _V_vars(Kw, V_depends_on),
                      {"V_depends_on": V_depends_on, "eliminate": eliminate})
    prog.add_free("V", _V_basis(Kw, prog.V_vars, plan.deg_V, 1 if kind == "l2gain" else 0))
    if with_gamma:
        prog.gamma_id = prog.add_scalar("gamma").ids[0]
    return prog


def _disturbed_identities(prog: SosProgram, decrease_lhs: Polynomial, nonneg_lhs: Polynomial, eliminate):
    K, space = prog.K, prog.K.space
    ww = _sq_vars(space, Group.W)
    gam = ww if prog.gamma_id is not None else None
    all_g, all_h = list(range(len(K.g))), list(range(len(K.h)))
    _add_identity(prog, "decrease", all_g, all_h, decrease_lhs, ((1.0, "current"), (-1.0, "successor")),
                  gam, eliminate)
    cur_g = [i for i, t in enumerate(K.g_tags) if t in ("current", "disturbance")]
    cur_h = [j for j, t in enumerate(K.h_tags) if t == "current"]
    _add_identity(prog, "nonneg", cur_g, cur_h, nonneg_lhs, ((1.0, "current"),), None, eliminate)


def build_l2gain_program(Kw: ConstraintSet, plan: DegreePlan | None = None, V_depends_on: str = "full",
                         eliminate: bool = True) -> SosProgram:
    """min gamma s.t. V - V+ - |f_y|^2 + gamma |w|^2 and V are SOS modulo K_w.

    V(0, .) = 0 is built in: every monomial of the V template has x-degree >= 1.
    """
    prog = _disturbed_program("l2gain", Kw, plan, V_depends_on, eliminate, True)
    space = Kw.space
    yy = _sq_norm(Kw.f_y) or Polynomial.zero(space)
    _disturbed_identities(prog, -yy, Polynomial.zero(space), eliminate)
    return prog


def build_iss_program(Kw: ConstraintSet, plan: DegreePlan | None = None, V_depends_on: str = "full",
                      force_gamma_zero: bool = False, eliminate: bool = True) -> SosProgram:
    """V - V+ - |x|^2 + gamma |w|^2 and V - |x|^2 SOS modulo K_w (min gamma)."""
    prog = _disturbed_program("iss", Kw, plan, V_depends_on, eliminate, not force_gamma_zero)
    prog.options["force_gamma_zero"] = force_gamma_zero
    xx = _sq_vars(Kw.space, Group.X)
    _disturbed_identities(prog, -xx, -xx, eliminate)
    return prog


# ---------------------------------------------------------------------------
# coefficient matching


def _mono_str(space, m: Monomial) -> str:
    if not m:
        return "1"
    return "*".join(space.names[v] + (f"^{e}" if e > 1 else "") for v, e in m)


def _relaxation_zeros(rows, zero: set, sign_constrained) -> list:
    """Sign-constrained decisions that vanish on every point of a polyhedral relaxation.

    The PSD constraints are relaxed to nonnegative diagonals and the system
    ``A v = s b`` is homogenised with ``s >= 0``.  Maximising ``sum t`` with
    ``t <= v_k``, ``t <= 1`` over that cone gives ``t_k = 1`` on the largest
    possible support, so every ``k`` left at ``t_k = 0`` is zero in every
    feasible point of the original problem as well.
    """
    from scipy.optimize import linprog

    col: dict = {}
    r_idx, c_idx, vals, rhs = [], [], [], []
    for _, _, ent, b in rows:
        live = [(k, c) for k, c in ent.items() if k not in zero]
        if not live:
            continue
        r = len(rhs)
        for k, c in live:
            j = col.setdefault(k, len(col))
            r_idx.append(r)
            c_idx.append(j)
            vals.append(c)
        rhs.append(b)
    if not col:
        return []
    keys = list(col)
    signed = [j for j, k in enumerate(keys) if sign_constrained(k)]
    if not signed:
        return []
    nv, m, nt = len(keys), len(rhs), len(signed)
    A = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(m, nv))
    A_eq = sp.hstack([A, sp.csr_matrix(-np.asarray(rhs).reshape(-1, 1)), sp.csr_matrix((m, nt))]).tocsr()
    sel = sp.csr_matrix((np.ones(nt), (np.arange(nt), signed)), shape=(nt, nv))
    A_ub = sp.hstack([-sel, sp.csr_matrix((nt, 1)), sp.eye(nt)]).tocsr()
    lower = np.full(nv, -np.inf)
    lower[signed] = 0.0
    bounds = list(zip(lower, [None] * nv)) + [(0.0, None)] + [(None, 1.0)] * nt
    cost = np.concatenate([np.zeros(nv + 1), -np.ones(nt)])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(nt), A_eq=A_eq, b_eq=np.zeros(m), bounds=bounds,
                  method="highs")
    if res.status != 0:
        return []
    t = res.x[nv + 1:]
    return [keys[signed[q]] for q in np.flatnonzero(t < 0.5)]


def coefficient_match(prog: SosProgram, prune: bool = True, relaxation: bool = True) -> SdpProblem:
    """Lower the program to a standard-form SDP; the column map goes to ``prog.lowering``.

    Facial pruning: a row with zero right-hand side whose live entries are all
    sign-constrained (Gram diagonals, LP scalars) with one common sign forces
    each of them to zero; a zero Gram diagonal removes its basis element.
    With ``relaxation`` an LP over the diagonal relaxation finds the remaining
    decisions that are forced to zero by combinations of rows.
    """
    space = prog.space
    rows = []  # (identity name, monomial, entries dict, rhs)
    for ident, rr in zip(prog.identities, prog.rows):
        scale = max((abs(c) for row in rr.values() for c in row.values()), default=1.0)
        cut = 1e-14 * scale
        for m, row in rr.items():
            rhs = -row.get(CONST_KEY, 0.0)
            ent = {k: c for k, c in row.items() if k != CONST_KEY and abs(c) > cut}
            if abs(rhs) <= cut:
                rhs = 0.0
            rows.append((ident.name, m, ent, rhs))
    kinds = prog.kinds
    zero: set = set()
    removed = [set() for _ in prog.grams]

    def sign_constrained(k):
        if kinds[k] == "lp":
            return True
        if kinds[k] == "gram":
            _, i, j = prog.gram_entry[k]
            return i == j
        return False

    def fix(k):
        zero.add(k)
        if kinds[k] == "gram":
            gi, i, _ = prog.gram_entry[k]
            if i not in removed[gi]:
                removed[gi].add(i)
                blk = prog.grams[gi]
                zero.update(blk.entry_id(i, j) for j in range(blk.size))

    rounds = 0
    while prune:
        changed = True
        while changed:
            changed = False
            for _, _, ent, rhs in rows:
                if rhs != 0.0:
                    continue
                live = [(k, c) for k, c in ent.items() if k not in zero]
                if not live or not all(sign_constrained(k) for k, _ in live):
                    continue
                if not (all(c > 0 for _, c in live) or all(c < 0 for _, c in live)):
                    continue
                for k, _ in live:
                    fix(k)
                changed = True
        rounds += 1
        if not relaxation or rounds > 5:
            break
        forced = _relaxation_zeros(rows, zero, sign_constrained)
        if not forced:
            break
        for k in forced:
            fix(k)
    # columns
    blocks, columns, gram_kept = [], {}, {}
    for gi, blk in enumerate(prog.grams):
        keep = [i for i in range(blk.size) if i not in removed[gi]]
        gram_kept[gi] = keep
        if not keep:
            continue
        bidx = len(blocks)
        n = len(keep)
        blocks.append(Block(n, "psd"))
        for a, i in enumerate(keep):
            for b in range(a, n):
                j = keep[b]
                columns[blk.entry_id(i, j)] = (bidx, tri_index(a, b, n), 1.0 if a == b else 0.5)
    used = set()
    for _, _, ent, _ in rows:
        used.update(ent)
    lp = [k for k, kd in enumerate(kinds) if kd == "lp" and k not in zero]
    if lp:
        bidx = len(blocks)
        blocks.append(Block(len(lp), "lp"))
        for a, k in enumerate(lp):
            columns[k] = (bidx, a, 1.0)
    fr = [k for k, kd in enumerate(kinds) if kd == "free" and k in used]
    if fr:
        bidx = len(blocks)
        blocks.append(Block(len(fr), "free"))
        for a, k in enumerate(fr):
            columns[k] = (bidx, a, 1.0)
    # rows
    data = [([], [], []) for _ in blocks]
    b, labels = [], []
    pruned = 0
    for name, m, ent, rhs in rows:
        live = [(k, c) for k, c in ent.items() if k not in zero]
        if not live:
            if rhs != 0.0:
                raise StructurallyInfeasible(name, _mono_str(space, m), rhs)
            pruned += 1
            continue
        r = len(b)
        for k, c in live:
            bi, pos, f = columns[k]
            data[bi][0].append(r)
            data[bi][1].append(pos)
            data[bi][2].append(c * f)
        b.append(rhs)
        labels.append((name, m))
    mrows = len(b)
    A = [sp.csr_matrix((v, (r, c)), shape=(mrows, blk.nvar)) for (r, c, v), blk in zip(data, blocks)]
    C = [np.zeros(blk.nvar) for blk in blocks]
    if prog.gamma_id is not None and prog.gamma_id in columns:
        bi, pos, _ = columns[prog.gamma_id]
        C[bi][pos] = 1.0
    else:
        for bi, blk in enumerate(blocks):
            if blk.kind == "psd":
                ii, jj = triu(blk.size)
                C[bi][ii == jj] = 1.0
    prog.lowering = Lowering(columns, frozenset(zero), gram_kept, blocks, labels, pruned)
    return SdpProblem(blocks, A, np.array(b, dtype=float), C)


# ---------------------------------------------------------------------------
# recovery


@dataclass
class Extraction:
    """Decision values mapped back to polynomials in the original coordinates."""

    V: Polynomial
    gamma: float | None
    multipliers: dict  # name -> Polynomial
    grams: dict  # name -> (basis in original coordinates, Gram matrix)
    scalars: dict  # name -> value (degree-0 SOS multipliers, gamma)
    reduced_residual: dict  # identity -> max |coef| left after the division


def decision_values(prog: SosProgram, xs) -> np.ndarray:
    low = prog.lowering
    if low is None:
        raise RuntimeError("coefficient_match has not been run on this program")
    vals = np.zeros(prog.n_decisions)
    for k, (bi, pos, _) in low.columns.items():
        vals[k] = xs[bi][pos]
    return vals


def _unshift(space, shift, kept_or_all) -> dict:
    """Local coordinate z_v -> xi_v - s_v."""
    return {v: Polynomial.affine(space, {v: 1.0}, -float(shift[v])) for v in kept_or_all}


def _template_poly(prog: SosProgram, t: SosTemplate, vals: np.ndarray) -> Polynomial:
    space = prog.space
    terms: dict = {}
    if t.kind in ("free", "lp"):
        for b, k in zip(t.basis, t.ids):
            terms[b] = terms.get(b, 0.0) + vals[k]
    else:
        n = len(t.basis)
        ii, jj = triu(n)
        for k, a, c in zip(t.ids, ii, jj):
            m = mono_mul(t.basis[a], t.basis[c])
            terms[m] = terms.get(m, 0.0) + (1.0 if a == c else 2.0) * vals[k]
    return Polynomial(space, terms)


def _to_original(prog: SosProgram, p: Polynomial) -> Polynomial:
    if np.all(prog.shift == 0):
        return p
    return substitute(p, _unshift(prog.space, prog.shift, p.variables()), prog.space)


def gram_matrix(prog: SosProgram, t: SosTemplate, vals: np.ndarray) -> np.ndarray:
    n = len(t.basis)
    ii, jj = triu(n)
    W = np.zeros((n, n))
    W[ii, jj] = vals[list(t.ids)]
    W[jj, ii] = W[ii, jj]
    return W


def identity_sides(prog: SosProgram, ident: Identity, V: Polynomial, gamma: float | None,
                   mult: dict, include_eliminated: bool = True) -> tuple[Polynomial, Polynomial]:
    """(lhs, rhs) of an identity in original coordinates from concrete polynomials."""
    K, space = prog.K, prog.space
    smap = space.successor_map()
    lhs = ident.lhs_known
    for sign, which in ident.lhs_V:
        Vt = V if which == "current" else V.rename(smap)
        lhs = lhs + Vt.scale(sign)
    if ident.lhs_gamma is not None and gamma is not None:
        lhs = lhs + ident.lhs_gamma.scale(gamma)
    rhs = mult[ident.sigma0]
    for tn, kind, i in ident.products:
        c = K.g[i] if kind == "g" else K.h[i]
        rhs = rhs + poly_mul(mult[tn], c)
    if include_eliminated:
        for j, nm in ident.eliminated:
            rhs = rhs + poly_mul(mult[nm], K.h[j])
    return lhs, rhs


def complete_multipliers(prog: SosProgram, V: Polynomial, gamma: float | None, mult: dict,
                         drop_rel: float = 0.0) -> dict:
    """Fill in the multipliers of eliminated equalities (in place) by exact division.

    ``mult`` must hold every template multiplier.  Returns, per identity, the size of
    the remainder left after dividing out the eliminated equalities; it vanishes
    exactly when the identity holds with some choice of those multipliers.
    """
    space = prog.space
    resid = {}
    for ident in prog.identities:
        lhs, rhs = identity_sides(prog, ident, V, gamma, mult, include_eliminated=False)
        R = lhs - rhs
        qs = []
        for p in ident.pivots:
            q, R = divide_by_substitution(R, p, ident.phi[p])
            qs.append(q)
        resid[ident.name] = R.max_abs_coef()
        for col, (j, nm) in enumerate(ident.eliminated):
            acc = Polynomial.zero(space)
            for r, q in enumerate(qs):
                t = ident.T[r, col]
                if t != 0.0:
                    acc = acc + q.scale(t)
            mult[nm] = acc.prune(drop_rel) if drop_rel else acc
    return resid


def extract(prog: SosProgram, xs, drop_rel: float = 0.0) -> Extraction:
    """Polynomials of the certificate, including the eliminated-equality multipliers."""
    vals = decision_values(prog, xs)
    space = prog.space
    V = _to_original(prog, _template_poly(prog, prog.templates["V"], vals))
    if drop_rel:
        V = V.prune(drop_rel)
    gamma = float(vals[prog.gamma_id]) if prog.gamma_id is not None else None
    mult, grams, scalars = {}, {}, {}
    if gamma is not None:
        scalars["gamma"] = gamma
    for name, t in prog.templates.items():
        if name in ("V", "gamma"):
            continue
        p = _to_original(prog, _template_poly(prog, t, vals))
        if t.kind == "sos":
            basis = [_to_original(prog, Polynomial(space, {b: 1.0})) for b in t.basis]
            grams[name] = (basis, gram_matrix(prog, t, vals))
        elif t.kind == "lp":
            scalars[name] = float(vals[t.ids[0]])
        mult[name] = p.prune(drop_rel) if drop_rel else p
    resid = complete_multipliers(prog, V, gamma, mult, drop_rel)
    return Extraction(V, gamma, mult, grams, scalars, resid)
