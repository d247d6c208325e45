from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelnl.core import U_CN, decoherent_action, ket, proj, random_density
from channelnl.polytope import CondDist, bell_value, chsh, is_local, local_vertices, uniform
from channelnl.stochsim import (ClassicalLosrModel, MeasurementAssemblage, classical_losr_matrix, load_assemblage,
                                lose_channel, lose_decoherent_action, needs_communication, phi_plus, prop3_demo,
                                random_lose_instance, save_assemblage, tsirelson_assemblage)

Z_BASIS = (proj(ket(0)), proj(ket(1)))


def test_tsirelson_instance():
    s = lose_decoherent_action(phi_plus(), tsirelson_assemblage())
    assert bell_value(s, chsh()) == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert needs_communication(s)


def test_computational_measurements_on_phi_plus():
    m = MeasurementAssemblage((Z_BASIS, Z_BASIS), (Z_BASIS, Z_BASIS))
    s = lose_decoherent_action(phi_plus(), m)
    want = np.array([[0.5] * 4, [0] * 4, [0] * 4, [0.5] * 4])
    assert np.allclose(s.matrix, want)
    assert not needs_communication(s)


def test_product_state_gives_local(rng):
    tau = np.kron(random_density(2, rng), random_density(2, rng))
    _, m = random_lose_instance(rng)
    assert is_local(lose_decoherent_action(tau, m)).local


def test_kraus_path_agrees(rng):
    for _ in range(5):
        tau, m = random_lose_instance(rng)
        j = lose_channel(tau, m)
        assert j.is_cptp(1e-9)
        assert np.allclose(decoherent_action(j).matrix, lose_decoherent_action(tau, m).matrix, atol=1e-9)


def test_assemblage_validation():
    with pytest.raises(ValueError):
        MeasurementAssemblage(((np.eye(2), np.eye(2)),), (Z_BASIS,))
    with pytest.raises(ValueError):
        MeasurementAssemblage(((np.diag([1.5, 1]), np.diag([-0.5, 0])),), (Z_BASIS,))


def test_assemblage_json(tmp_path):
    p = tmp_path / "m.json"
    m = tsirelson_assemblage()
    save_assemblage(p, m)
    back = load_assemblage(p)
    for x in range(2):
        for a in range(2):
            assert np.allclose(back.effects_a[x][a], m.effects_a[x][a])
            assert np.allclose(back.effects_b[x][a], m.effects_b[x][a])


def test_classical_models():
    verts = local_vertices((2, 2, 2, 2)).vertices
    det_a = np.array([[1.0, 0.0], [0.0, 1.0]])
    det_b = np.array([[0.0, 0.0], [1.0, 1.0]])
    single = classical_losr_matrix(ClassicalLosrModel(np.array([1.0]), (det_a,), (det_b,)))
    assert any(np.allclose(single.matrix, v) for v in verts)
    with pytest.raises(ValueError):
        ClassicalLosrModel(np.array([0.5, 0.6]), (det_a, det_a), (det_b, det_b))


def test_uniform_mixture_of_vertices():
    fa = [np.eye(2)[:, list(f)] for f in np.ndindex(2, 2)]
    fb = [np.eye(2)[:, list(g)] for g in np.ndindex(2, 2)]
    pairs = [(a, b) for a in fa for b in fb]
    model = ClassicalLosrModel(np.full(16, 1 / 16), tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
    assert np.allclose(classical_losr_matrix(model).matrix, uniform((2, 2, 2, 2)).matrix)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_classical_models_are_local(seed, k):
    s = classical_losr_matrix(ClassicalLosrModel.random(np.random.default_rng(seed), k=k))
    assert not needs_communication(s)


def test_signaling_needs_communication():
    assert needs_communication(CondDist(U_CN.real, (2, 2, 2, 2)))


def test_prop3_report():
    r = prop3_demo()
    assert r.chsh == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert not r.local and not r.classical_losr_reachable
    assert r.witness_value > r.witness_local_bound
    assert set(r.to_json()) >= {"chsh", "local", "lp_status", "witness"}
