from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelnl.core import U_CN
from channelnl.polytope import (CondDist, ScenarioError, bell_value, chsh, is_local, is_nonsignaling, load_csv,
                                local_vertices, max_bell_local, max_bell_nonsignaling, nu_1, nu_diamond, nu_relent,
                                nu_relent_pg, pr_box, save_csv, uniform)

# independent oracle (cvxpy model written from scratch): frozen values
NU1_PR = 2.0
NU1_CN = 4.0
NUD_PR = 0.5
NUD_CN = 1.0
NUREL_PR = 1.1507282324
NUREL_CN = 4 * math.log(2)

CN = CondDist(U_CN.real, (2, 2, 2, 2))


def _vertex(k: int) -> CondDist:
    return CondDist(local_vertices((2, 2, 2, 2)).vertices[k], (2, 2, 2, 2))


def test_vertex_counts():
    assert len(local_vertices((2, 2, 2, 2))) == 16
    assert len(local_vertices((1, 1, 2, 2))) == 4
    with pytest.raises(ScenarioError):
        local_vertices((3, 3, 4, 4), cap=100)


def test_conddist_validation():
    with pytest.raises(ValueError):
        CondDist(np.full((4, 4), 0.3), (2, 2, 2, 2))
    with pytest.raises(ScenarioError):
        CondDist(np.full((4, 2), 0.25), (2, 2, 2, 2))


def test_nonsignaling():
    assert is_nonsignaling(pr_box())[0]
    ok, viol = is_nonsignaling(CN)
    assert not ok and viol == pytest.approx(1.0)
    for k in range(16):
        assert is_nonsignaling(_vertex(k))[0]


def test_locality():
    assert is_local(uniform((2, 2, 2, 2))).local
    res = is_local(pr_box())
    assert not res.local
    assert bell_value(pr_box(), res.witness) > res.local_bound + 1e-6
    mix = CondDist(0.3 * _vertex(2).matrix + 0.7 * _vertex(9).matrix, (2, 2, 2, 2))
    r = is_local(mix)
    assert r.local
    assert np.allclose(r.weights @ local_vertices((2, 2, 2, 2)).vertices.reshape(16, -1), mix.matrix.reshape(-1),
                       atol=1e-7)


def test_bell_values():
    assert bell_value(pr_box(), chsh()) == pytest.approx(4.0)
    assert max_bell_local(chsh()) == pytest.approx(2.0)
    assert bell_value(uniform((2, 2, 2, 2)), chsh()) == pytest.approx(0.0)
    assert max_bell_nonsignaling(chsh()) == pytest.approx(4.0, abs=1e-7)


def test_measures_against_oracle():
    assert nu_1(pr_box()) == pytest.approx(NU1_PR, abs=1e-7)
    assert nu_1(CN) == pytest.approx(NU1_CN, abs=1e-7)
    assert nu_diamond(pr_box()) == pytest.approx(NUD_PR, abs=1e-7)
    assert nu_diamond(CN) == pytest.approx(NUD_CN, abs=1e-7)
    assert nu_relent(pr_box()) == pytest.approx(NUREL_PR, abs=1e-6)
    assert nu_relent(CN) == pytest.approx(NUREL_CN, abs=1e-6)


def test_relent_two_methods_agree():
    assert nu_relent_pg(pr_box()) == pytest.approx(nu_relent(pr_box()), abs=1e-5)


@pytest.mark.parametrize("k", [0, 5, 10, 15])
def test_measures_vanish_on_vertices(k):
    v = _vertex(k)
    assert nu_1(v) == pytest.approx(0, abs=1e-7)
    assert nu_diamond(v) == pytest.approx(0, abs=1e-7)
    assert nu_relent(v) == pytest.approx(0, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_local_mixtures_measure_zero(seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(16))
    s = CondDist(np.tensordot(w, local_vertices((2, 2, 2, 2)).vertices, 1), (2, 2, 2, 2))
    assert is_local(s).local
    assert nu_1(s) <= 1e-7


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "pr.csv"
    save_csv(p, pr_box())
    assert np.allclose(load_csv(p).matrix, pr_box().matrix)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,x,y,p\n0,0,0,0,0.5\n")
    with pytest.raises(ValueError):
        load_csv(bad)


def test_chsh_coefficients():
    c = chsh().coefficients
    for a, b, x, y in itertools.product(range(2), repeat=4):
        assert c[a * 2 + b, x * 2 + y] == (-1) ** (a + b + x * y)
