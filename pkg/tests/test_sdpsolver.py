import re

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from nnsos.sdpsolver import (Block, ProblemError, SdpProblem, SolverSettings, export_sdpa, farkas_check,
                             import_sdpa, residuals, smat, solve, svec)
from nnsos.sdpsolver.presolve import RemoveDependencies

from helpers import random_sdp, random_sizes


def one_by_one(b):
    return SdpProblem([Block(1)], [sp.csr_matrix([[1.0]])], [b])


def test_trivial_feasible():
    sol = solve(one_by_one(1.0))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx([1.0])
    assert max(sol.residuals) <= 1e-8


def test_trivial_infeasible_has_farkas_ray():
    prob = one_by_one(-1.0)
    sol = solve(prob)
    assert sol.status == "infeasible-certificate"
    assert farkas_check(prob, sol.farkas)


def test_residual_examples():
    prob = one_by_one(1.0)
    assert residuals(prob, [np.array([1.0])], np.zeros(1)) == (0.0, 0.0, 0.0)
    pinf = residuals(prob, [np.array([1.0 + 1e-3])], np.zeros(1))[0]
    assert pinf == pytest.approx(1e-3 / 2)  # relative to 1 + |b|


def test_svec_round_trip():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((5, 5))
    M = G + G.T
    assert np.allclose(smat(svec(M), 5), M)


def test_settings_validated():
    with pytest.raises(ValueError):
        SolverSettings(tol_gap=0.0)
    with pytest.raises(ValueError):
        SolverSettings(step_fraction=1.0)


def check_optimal(prob, sol, tol=1e-8):
    assert sol.status == "optimal", sol.message
    assert max(residuals(prob, sol.x, sol.y)) <= tol


@given(st.integers(0, 2**32 - 1))
def test_random_strictly_feasible_sdps(seed):
    rng = np.random.default_rng(seed)
    prob = random_sdp(rng, int(rng.integers(1, 20)), random_sizes(rng))
    sol = solve(prob)
    check_optimal(prob, sol)
    for it in sol.log:
        assert it["pobj"] >= it["dobj"] - 1e-8 * (1 + abs(it["pobj"]) + abs(it["dobj"]))


def test_dependent_rows_are_removed_and_restored():
    rng = np.random.default_rng(5)
    base = random_sdp(rng, 6, [(4, "psd"), (3, "lp")])
    # append two rows that are combinations of existing ones
    Z = rng.standard_normal((2, 6))
    A = [sp.vstack([Ak, sp.csr_matrix(Z) @ Ak]).tocsr() for Ak in base.A]
    prob = SdpProblem(base.blocks, A, np.concatenate([base.b, Z @ base.b]), base.C)
    red = RemoveDependencies(prob)
    assert red.problem.m == 6
    sol = solve(prob)
    check_optimal(prob, sol)
    assert sol.y.shape == (8,)
    ref = solve(base)
    assert sol.primal_objective == pytest.approx(ref.primal_objective, rel=1e-6)


def test_inconsistent_dependent_rows_are_infeasible():
    A = sp.csr_matrix([[1.0], [2.0]])
    prob = SdpProblem([Block(1)], [A], [1.0, 3.0])
    assert RemoveDependencies(prob).problem is prob
    assert solve(prob).status == "infeasible-certificate"


def test_dependent_free_columns():
    # x_free appears twice with the same cost: one copy can be dropped
    A = [sp.csr_matrix([[1.0], [0.0]]), sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]])]
    prob = SdpProblem([Block(1), Block(2, "free")], A, [2.0, 1.0], [np.array([1.0]), np.array([0.5, 0.5])])
    sol = solve(prob)
    check_optimal(prob, sol)
    assert sol.primal_objective == pytest.approx(1.5, abs=1e-7)


# ---------------------------------------------------------------------------
# SDPA files

NUM = r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?|[-+]?inf|nan"


def sdpa_grammar_ok(text: str) -> bool:
    """Independent line-level grammar of the sparse SDPA format."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(('"', "*"))]
    try:
        m = int(lines[0].split()[0])
        nb = int(lines[1].split()[0])
        sizes = [int(t) for t in re.split(r"[\s,{}()]+", lines[2].strip()) if t]
        cvec = [t for t in re.split(r"[\s,{}()]+", lines[3].strip()) if t]
    except (ValueError, IndexError):
        return False
    if len(sizes) != nb or len(cvec) != m or any(s == 0 for s in sizes):
        return False
    if not all(re.fullmatch(NUM, t) for t in cvec):
        return False
    for ln in lines[4:]:
        tok = ln.split()
        if len(tok) != 5 or not all(re.fullmatch(r"\d+", t) for t in tok[:4]) or not re.fullmatch(NUM, tok[4]):
            return False
        k, b, i, j = map(int, tok[:4])
        if not (0 <= k <= m and 1 <= b <= nb and 1 <= i <= j <= abs(sizes[b - 1])):
            return False
        if sizes[b - 1] < 0 and i != j:
            return False
    return True


@given(st.integers(0, 2**32 - 1))
def test_sdpa_round_trip_is_byte_identical(seed):
    rng = np.random.default_rng(seed)
    prob = random_sdp(rng, int(rng.integers(1, 10)), random_sizes(rng))
    text = export_sdpa(prob)
    assert sdpa_grammar_ok(text)
    assert export_sdpa(import_sdpa(text)) == text


def test_sdpa_import_rejects_garbage():
    with pytest.raises(ProblemError):
        import_sdpa("2\n1\n2\n1.0\n")
    with pytest.raises(ProblemError):
        import_sdpa("1\n1\n2\n1.0\n1 1 3 1 1.0\n")


def test_free_block_export_solves_the_same():
    rng = np.random.default_rng(11)
    prob = random_sdp(rng, 5, [(3, "psd"), (2, "free")])
    back = import_sdpa(export_sdpa(prob))
    a, b = solve(prob), solve(back)
    check_optimal(prob, a)
    check_optimal(back, b)
    assert a.primal_objective == pytest.approx(b.primal_objective, rel=1e-6, abs=1e-7)
