"""Acceptance criteria, one test each, at their stated tolerances."""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from channelnl.cli import coherent_example, main
from channelnl.core import (U_CN, choi_from_unitary, decoherent_action, dephase, random_choi,
                            random_unitary, relative_entropy_matrix, trace_norm)
from channelnl.hierarchy import membership
from channelnl.polytope import bell_value, chsh, is_local, nu_1, pr_box, relative_entropy
from channelnl.seesaw import seesaw_optimize
from channelnl.stochsim import (ClassicalLosrModel, classical_losr_matrix, lose_decoherent_action, phi_plus,
                                tsirelson_assemblage)
from channelnl.tasks import (CodeInstance, InterconversionInstance, assisted_fidelity, channel_distance,
                             decohered_distance, gamma, interconversion_fidelity, mu_grid, omega, unitary_n1_bounds)

SEED = 7


@pytest.fixture(scope="module")
def channels():
    rng = np.random.default_rng(SEED)
    return [random_choi(rng=rng) for _ in range(5)]


def test_c01_chsh_anchors(criterion):
    t0 = time.perf_counter()
    res = {s: gamma(1.0, s, full=True) for s in ("cptp+lda", "cptp+nsda", "cptp+npa1")}
    dt = time.perf_counter() - t0
    ok = (abs(res["cptp+lda"].value - 2) <= 1e-6 and abs(res["cptp+nsda"].value - 4) <= 1e-6
          and abs(res["cptp+npa1"].value - 2 * math.sqrt(2)) <= 1e-4 and dt < 30
          and all(r.status == "optimal" for r in res.values()))
    detail = ", ".join(f"{k}={r.value:.8f}" for k, r in res.items()) + f" ({dt:.2f}s)"
    assert criterion(1, ok, detail), detail


def test_c02_gap(criterion):
    rows, ok = [], True
    for mu in (0.6, 0.75, 0.9):
        t0 = time.perf_counter()
        r = [gamma(mu, s, full=True) for s in ("losr1+lda", "losr1+npa2", "losr1+nsda")]
        dt = time.perf_counter() - t0
        lda, npa, nsda = (x.value for x in r)
        ok &= lda + 0.05 < npa < nsda - 0.05 and dt < 60 and all(x.status == "optimal" for x in r)
        rows.append(f"mu={mu}: {lda:.5f} < {npa:.5f} < {nsda:.5f} ({dt:.2f}s)")
    detail = "; ".join(rows)
    assert criterion(2, ok, detail), detail


def test_c03_prop1_decohered_equality(criterion, channels):
    worst, ok = 0.0, True
    for j in channels:
        r = decohered_distance(j)
        ok &= r.status == "optimal"
        worst = max(worst, abs(r.value - nu_1(decoherent_action(j))))
    ok &= worst <= 1e-5
    detail = f"max |distance - nu1| = {worst:.2e} over {len(channels)} channels"
    assert criterion(3, ok, detail), detail


def test_c04_prop1_coherent_bound(criterion, channels):
    worst, ok = math.inf, True
    for j in channels:
        r = channel_distance(j)
        ok &= r.status == "optimal"
        worst = min(worst, r.value - nu_1(decoherent_action(j)))
    jc = choi_from_unitary(coherent_example())
    rc = channel_distance(jc)
    gap = rc.value - nu_1(decoherent_action(jc))
    ok &= worst >= -1e-5 and gap > 1e-3 and rc.status == "optimal"
    detail = f"min(bound - nu1) = {worst:.4f}; exp(i pi/8 ZZ): bound - nu1 = {gap:.4f}"
    assert criterion(4, ok, detail), detail


def test_c05_reduction_identities(criterion):
    rng = np.random.default_rng(SEED)
    worst_tn = worst_re = 0.0
    for _ in range(20):
        a, b = random_choi(rng=rng), random_choi(rng=rng)
        sa, sb = decoherent_action(a), decoherent_action(b)
        worst_tn = max(worst_tn, abs(trace_norm(dephase(a).matrix - dephase(b).matrix)
                                     - np.abs(sa.matrix - sb.matrix).sum()))
        # full support: random Choi matrices of rank 3 have strictly positive diagonals
        assert sb.matrix.min() > 0
        worst_re = max(worst_re, abs(relative_entropy_matrix(dephase(a).matrix, dephase(b).matrix)
                                     - relative_entropy(sa.matrix, sb.matrix)))
    ok = worst_tn <= 1e-9 and worst_re <= 1e-9
    detail = f"trace norm max err {worst_tn:.1e}, relative entropy max err {worst_re:.1e} (20 pairs)"
    assert criterion(5, ok, detail), detail


def test_c06_pr_box_hierarchy(criterion):
    pr = np.diag(pr_box().vec())
    a = membership(pr, "losr1")
    b = membership(pr, "losr1+lda")
    ok = a.status == "optimal" and b.status == "infeasible"
    detail = f"losr1: {a.status} ({a.raw_status}); losr1+lda: {b.status} ({b.raw_status})"
    assert criterion(6, ok, detail), detail


def test_c07_codes(criterion):
    worst_pp, worst_sup, ok = 0.0, math.inf, True
    for mu in mu_grid(0.0, 1.0, 0.05):
        pp = assisted_fidelity(CodeInstance(mu, "cptpp"), full=True)
        sup = assisted_fidelity(CodeInstance(mu, "super1way"), full=True)
        ok &= pp.status == sup.status == "optimal"
        worst_pp = max(worst_pp, abs(pp.value - 1))
        worst_sup = min(worst_sup, sup.value - (1 - 0.75 * mu))
        if mu == 0.0:
            ok &= abs(sup.value - 1) <= 1e-7 and abs(pp.value - 1) <= 1e-7
    ok &= worst_pp <= 1e-7 and worst_sup >= -1e-7
    detail = f"max |cptpp - 1| = {worst_pp:.1e}; min(super1way - (1 - 3mu/4)) = {worst_sup:.4f}"
    assert criterion(7, ok, detail), detail


def test_c08_interconversion(criterion):
    f1 = interconversion_fidelity(InterconversionInstance(1.0), "losr1+lda", full=True)
    ok = abs(f1.value - 1) <= 1e-7 and f1.status == "optimal"
    worst = math.inf
    for mu in mu_grid(0.5, 1.0, 0.025):
        inst = InterconversionInstance(mu)
        r = [interconversion_fidelity(inst, s, full=True) for s in ("losr1+lda", "sep3", "cptp")]
        ok &= all(x.status == "optimal" for x in r)
        worst = min(worst, r[1].value - r[0].value, r[2].value - r[1].value)
    ok &= worst >= -1e-6
    detail = f"F(mu=1) = {f1.value:.9f}; min ordering slack = {worst:.2e} over 21 grid points"
    assert criterion(8, ok, detail), detail


def test_c09_seesaw_sandwich(criterion):
    om = omega(1.0).matrix
    res = seesaw_optimize(om, seed=SEED)
    outer = gamma(1.0, "losr1+lda")
    ok = 2 - 1e-4 <= res.value <= outer + 1e-6 and res.monotone()
    detail = f"seesaw {res.value:.8f}, outer {outer:.8f}, monotone={res.monotone()}, restarts={len(res.histories)}"
    assert criterion(9, ok, detail), detail


def test_c10_prop3(criterion):
    t0 = time.perf_counter()
    s = lose_decoherent_action(phi_plus(), tsirelson_assemblage())
    value = bell_value(s, chsh())
    nonlocal_ = not is_local(s).local
    rng = np.random.default_rng(SEED)
    locals_ = sum(is_local(classical_losr_matrix(ClassicalLosrModel.random(rng))).local for _ in range(100))
    dt = time.perf_counter() - t0
    ok = abs(value - 2 * math.sqrt(2)) <= 1e-9 and nonlocal_ and locals_ == 100 and dt < 60
    detail = f"CHSH = {value:.12f}, is_local = {not nonlocal_}, classical local {locals_}/100 ({dt:.2f}s)"
    assert criterion(10, ok, detail), detail


def test_c11_unitary_bounds(criterion):
    cn = unitary_n1_bounds(U_CN, with_upper=False)
    ident = unitary_n1_bounds(np.eye(4))
    ok = cn.lower > 0 and ident.lower <= 1e-6 and ident.upper <= 1e-6
    rng = np.random.default_rng(SEED)
    worst, statuses = math.inf, []
    for _ in range(10):
        b = unitary_n1_bounds(random_unitary(4, rng), with_upper=False)
        statuses.append(b.status)
        worst = min(worst, b.direct - b.lower)
    ok &= worst >= -1e-6 and all(s == "optimal" for s in statuses + [cn.status, ident.status])
    detail = (f"U_CN lower {cn.lower:.4f}; identity lower {ident.lower:.1e} upper {ident.upper:.1e}; "
              f"min(direct - FvG) = {worst:.4f} over 10 unitaries")
    assert criterion(11, ok, detail), detail


def test_c12_default_run_time(criterion, tmp_path):
    t0 = time.perf_counter()
    codes = [main(["verify", "--out", str(tmp_path / "verify.json")])]
    for panel in ("a", "b", "c"):
        codes.append(main(["figure", panel, "--out", str(tmp_path / f"panel_{panel}.csv")]))
    dt = time.perf_counter() - t0
    ok = all(c == 0 for c in codes) and dt < 30 * 60
    detail = f"verify + figure a/b/c in {dt:.1f}s on this machine, exit codes {codes}"
    assert criterion(12, ok, detail), detail
