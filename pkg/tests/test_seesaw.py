from __future__ import annotations

import numpy as np
import pytest

from channelnl.core import local_choi_from_kraus, product_choi, random_unitary
from channelnl.seesaw import LosrAnsatz, ansatz_marginal_check, seesaw_optimize
from channelnl.tasks import diagonal_omega, gamma


@pytest.fixture(scope="module")
def omega1_run():
    return seesaw_optimize(diagonal_omega(), K=4, restarts=4, seed=7)


def test_omega1_reaches_local_bound(omega1_run):
    assert omega1_run.value == pytest.approx(2.0, abs=1e-4)
    assert omega1_run.value <= gamma(1.0, "losr1") + 1e-6
    assert ansatz_marginal_check(omega1_run.ansatz)


def test_monotone_ascent(omega1_run):
    assert omega1_run.monotone()
    for h in omega1_run.histories:
        assert np.all(np.diff(h) >= -1e-12)


def test_value_matches_ansatz(omega1_run):
    j = omega1_run.ansatz.matrix()
    assert np.real(np.trace(j @ diagonal_omega())) == pytest.approx(omega1_run.value, abs=1e-9)


def test_product_overlap_exact(rng):
    # fidelity with a product of local unitaries is 1 exactly at that product
    ua, ub = random_unitary(2, rng), random_unitary(2, rng)
    j = product_choi(local_choi_from_kraus([ua], side="A"), local_choi_from_kraus([ub], side="B")).matrix
    res = seesaw_optimize(j, K=1, restarts=3, seed=1)
    assert res.value / 16 == pytest.approx(1.0, abs=1e-6)


def test_deterministic_seed():
    a = seesaw_optimize(diagonal_omega(), K=2, restarts=2, seed=3, max_iters=20)
    b = seesaw_optimize(diagonal_omega(), K=2, restarts=2, seed=3, max_iters=20)
    assert a.value == b.value


def test_json_roundtrip(tmp_path, omega1_run):
    p = tmp_path / "ans.json"
    omega1_run.ansatz.dump(p)
    import json

    back = LosrAnsatz.from_json(json.loads(p.read_text()))
    assert np.allclose(back.matrix(), omega1_run.ansatz.matrix())


def test_invalid_k():
    with pytest.raises(ValueError):
        seesaw_optimize(diagonal_omega(), K=0)
