from __future__ import annotations

import numpy as np
import pytest

from channelnl.conic import ConicProblem, reduce_equalities, trace_norm_epigraph
from channelnl.core import SIGMA_X, U_CN, choi_from_unitary, trace_norm


def test_lp():
    p = ConicProblem()
    x = p.nonneg(1)
    p.add_le(x, 3.0)
    p.maximize(x.sum())
    rep = p.solve()
    assert rep.status == "optimal" and rep.objective == pytest.approx(3.0, abs=1e-7)


def test_sdp_trace():
    p = ConicProblem()
    x = p.hermitian(2, psd=True)
    p.add_psd(np.eye(2) - x)
    p.maximize(x.trace())
    assert p.solve().objective == pytest.approx(2.0, abs=1e-7)


def test_sdp_max_eigenvalue():
    p = ConicProblem()
    t = p.free(1)
    p.add_psd(t.kron_const(np.eye(2)) - SIGMA_X)
    p.minimize(t.sum())
    assert p.solve().objective == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("m, want", [(np.zeros((2, 2)), 0.0), (np.diag([1.0, -2.0]), 3.0)])
def test_trace_norm_constant(m, want):
    p = ConicProblem()
    t = trace_norm_epigraph(p, m, "tn", real=True)
    p.minimize(t)
    assert p.solve().objective == pytest.approx(want, abs=1e-7)


def test_trace_norm_cnot_minus_identity():
    m = choi_from_unitary(U_CN).matrix - choi_from_unitary(np.eye(4)).matrix
    p = ConicProblem()
    t = trace_norm_epigraph(p, m, "tn", real=True)
    p.minimize(t)
    assert p.solve().objective == pytest.approx(trace_norm(m), abs=1e-6)


def test_complex_variable():
    # max Re Tr(X C) with X psd, Tr X = 1 is the top eigenvalue of C
    c = np.array([[1.0, 1j], [-1j, 1.0]])
    p = ConicProblem()
    x = p.hermitian(2, psd=True)
    p.add_eq(x.trace(), 1.0)
    p.maximize(x.tr_prod(c))
    assert p.solve().objective == pytest.approx(2.0, abs=1e-7)


def test_infeasible_and_unbounded():
    p = ConicProblem()
    x = p.nonneg(1)
    p.add_le(x, -1.0)
    p.minimize(x.sum())
    assert p.solve().status == "infeasible"
    q = ConicProblem()
    y = q.nonneg(1)
    q.maximize(y.sum())
    assert q.solve().status == "unbounded"


def test_redundant_equalities_dropped():
    p = ConicProblem()
    x = p.free(2)
    s = x.sum()
    p.add_eq(s, 1.0)
    p.add_eq(s * 2.0, 2.0)
    p.add_eq(x.entry(0) - x.entry(1), 0.0)
    p.minimize(x.entry(0))
    form = p.standard_form()
    red, keep, ok = reduce_equalities(form)
    assert ok and red["A"].shape[0] == 2
    rep = p.solve()
    assert rep.objective == pytest.approx(0.5, abs=1e-7)


def test_inconsistent_equalities():
    p = ConicProblem()
    x = p.free(1)
    p.add_eq(x, 1.0)
    p.add_eq(x * 2.0, 3.0)
    p.minimize(x.sum())
    assert p.solve().status == "infeasible"


def test_cvxpy_backend_agrees():
    pytest.importorskip("cvxpy")
    p = ConicProblem()
    x = p.hermitian(3, psd=True, real=True)
    p.add_eq(x.trace(), 1.0)
    c = np.array([[2.0, 1.0, 0.0], [1.0, 1.0, 0.5], [0.0, 0.5, 0.0]])
    p.maximize(x.tr_prod(c))
    a = p.solve().objective
    b = p.solve(backend="cvxpy").objective
    assert a == pytest.approx(np.linalg.eigvalsh(c).max(), abs=1e-6)
    assert b == pytest.approx(a, abs=1e-5)


def test_tagged_duals_present():
    p = ConicProblem()
    x = p.nonneg(1)
    p.add_le(x, 3.0, tag="cap")
    p.maximize(x.sum())
    rep = p.solve()
    assert "cap" in rep.duals and abs(rep.duals["cap"][0]) == pytest.approx(1.0, abs=1e-6)
