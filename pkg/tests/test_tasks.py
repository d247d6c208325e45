from __future__ import annotations

import math

import numpy as np
import pytest

from channelnl.core import U_CN, choi_from_unitary, link_apply
from channelnl.polytope import SolverFailure
from channelnl.tasks import (PANELS, CodeInstance, InterconversionInstance, assisted_fidelity, diagonal_omega,
                             evaluate, gamma, interconversion_fidelity, mu_grid, mu_states, omega, optimize_linear,
                             read_csv, sweep, unitary_n1_bounds)

# independent cvxpy/SCS model of J >= 0, TP, diag(J) in L
ORACLE_GAMMA_075_LDA = 3.7320508076
# regression constants from this package's own solves (outer sets with the
# first LOSR level underneath)
GAMMA_LOSR1 = {
    0.6: (2.25427, 2.326206, 2.4),
    0.75: (2.517638, 2.732051, 3.0),
    0.9: (2.565685, 2.985641, 3.6),
}


def test_omega_endpoints():
    assert np.allclose(omega(1.0).matrix, diagonal_omega())
    # columns at mu = 1/2 are the Bell states, up to sign
    b = omega(0.5).basis_unitary
    bell = np.array([[1, 0, 0, 1], [0, 1, 1, 0], [0, -1, 1, 0], [1, 0, 0, -1]]).T / math.sqrt(2)
    overlaps = np.abs(np.diag(bell.T @ b))
    assert np.allclose(overlaps, 1.0)
    for mu in (0.0, 0.3, 1.0):
        u = omega(mu).basis_unitary
        assert np.allclose(u.conj().T @ u, np.eye(4))
    with pytest.raises(ValueError):
        mu_states(1.2)


def test_gamma_anchors():
    assert gamma(1.0, "cptp+lda") == pytest.approx(2.0, abs=1e-6)
    assert gamma(1.0, "cptp+nsda") == pytest.approx(4.0, abs=1e-6)
    assert gamma(1.0, "cptp+npa1") == pytest.approx(2 * math.sqrt(2), abs=1e-4)
    assert gamma(0.75, "cptp+lda") == pytest.approx(ORACLE_GAMMA_075_LDA, abs=1e-6)


@pytest.mark.parametrize("mu", sorted(GAMMA_LOSR1))
def test_gamma_gap(mu):
    lda, npa, nsda = (gamma(mu, s) for s in ("losr1+lda", "losr1+npa2", "losr1+nsda"))
    assert lda + 0.05 < npa < nsda - 0.05
    assert (lda, npa, nsda) == pytest.approx(GAMMA_LOSR1[mu], abs=1e-5)


def test_gamma_symmetry_is_checked():
    c = choi_from_unitary(U_CN).matrix.real
    from channelnl.tasks import GAMMA_SYMMETRY

    with pytest.raises(ValueError):
        optimize_linear(c, "cptp", symmetry=GAMMA_SYMMETRY)


def test_interconversion_examples():
    assert interconversion_fidelity(InterconversionInstance(1.0), "losr1+lda") == pytest.approx(1.0, abs=1e-7)
    assert interconversion_fidelity(InterconversionInstance(0.5, 1.0), "cptp") == pytest.approx(1.0, abs=1e-7)
    inst = InterconversionInstance(0.7)
    a, b, c = (interconversion_fidelity(inst, s) for s in ("losr1+lda", "sep3", "cptp"))
    assert a <= b + 1e-6 <= c + 2e-6
    assert (a, b) == pytest.approx((0.8666061, 0.9176123), abs=1e-6)
    assert InterconversionInstance(0.5).entanglement_entropy() == pytest.approx(1.0)


def test_code_kernel_matches_link_product():
    # identity superchannel: fidelity of Xi[Lambda] equals that of Lambda
    inst = CodeInstance(0.4)
    xi = choi_from_unitary(np.eye(4))
    phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    direct = np.real(phi @ link_apply(xi, inst.channel()).matrix @ phi) / 2
    assert np.real(np.trace(xi.matrix @ inst.kernel())) == pytest.approx(direct, abs=1e-12)
    assert direct == pytest.approx(inst.unassisted(), abs=1e-12)


@pytest.mark.parametrize("mu", [0.0, 0.35, 1.0])
def test_codes(mu):
    assert assisted_fidelity(CodeInstance(mu, "cptpp")) == pytest.approx(1.0, abs=1e-7)
    sup = assisted_fidelity(CodeInstance(mu, "super1way"))
    assert sup >= 1 - 0.75 * mu - 1e-7
    loc = assisted_fidelity(CodeInstance(mu, "super1way+losr1"))
    assert loc == pytest.approx(1 - 0.75 * mu, abs=1e-6)
    if mu == 0.0:
        assert sup == pytest.approx(1.0, abs=1e-7)


def test_mu_grid():
    assert mu_grid(0.5, 1.0, 0.025)[-1] == 1.0 and len(mu_grid(0.5, 1.0, 0.025)) == 21
    assert len(mu_grid(0.0, 1.0, 0.05)) == 21
    with pytest.raises(ValueError):
        mu_grid(1.0, 0.0, 0.1)


def test_sweep_csv_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sets = PANELS["c"][2][:3]
    sweep("codes", [0.0, 0.5], sets, out=a, record_time=False)
    sweep("codes", [0.0, 0.5], sets, out=b, record_time=False)
    assert a.read_bytes() == b.read_bytes()
    rows = read_csv(a)
    assert len(rows) == 6 and all(r.status == "optimal" for r in rows)
    assert (tmp_path / "a.csv.json").exists()


def test_losr2_matches_local_bound():
    # the second level already pins the LOSR optimum of the CHSH functional
    assert sweep("gamma", [1.0], ["losr2"]).rows[0].value == pytest.approx(2.0, abs=1e-6)


def test_evaluate_unknown_task():
    with pytest.raises(ValueError):
        evaluate("nope", 0.5, "cptp")


def test_unitary_bounds_identity_and_cnot():
    b = unitary_n1_bounds(np.eye(4), seesaw_kw={"restarts": 2})
    assert b.lower <= 1e-6 and b.upper <= 1e-6 and b.direct <= 1e-6
    c = unitary_n1_bounds(U_CN, with_upper=False)
    assert c.lower > 0 and c.direct >= c.lower - 1e-6


def test_solver_failure_carries_report(monkeypatch):
    from channelnl.conic import ConicProblem, SolveReport

    def broken(self, **kw):
        return SolveReport("failed", None, np.zeros(1), {}, 0, 0.0, raw_status="NumericalError")

    monkeypatch.setattr(ConicProblem, "solve", broken)
    with pytest.raises(SolverFailure) as err:
        gamma(1.0, "cptp")
    assert err.value.report.status == "failed"
    row = sweep("gamma", [1.0], ["cptp"]).rows[0]
    assert row.status == "failed" and math.isnan(row.value)
