"""Stochastic matrices reachable without communication.

Classical parties sharing randomness reach exactly the local polytope.
Parties sharing an entangled state and acting with local channels that are
later dephased reach quantum correlations, which can lie outside it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (SIGMA_X, SIGMA_Z, ChoiMatrix, DensityMatrix, SubsystemShape, choi_from_map, is_psd, ket,
                   partial_trace, permute_subsystems, proj)
from .polytope import CondDist, bell_value, chsh, is_local, uniform

POVM_TOL = 1e-9


@dataclass(frozen=True)
class MeasurementAssemblage:
    """effects_a[x][a] acts on R, effects_b[y][b] acts on S."""

    effects_a: tuple
    effects_b: tuple

    def __post_init__(self):
        ea = tuple(tuple(np.asarray(e, dtype=complex) for e in povm) for povm in self.effects_a)
        eb = tuple(tuple(np.asarray(e, dtype=complex) for e in povm) for povm in self.effects_b)
        object.__setattr__(self, "effects_a", ea)
        object.__setattr__(self, "effects_b", eb)
        for side, fam in (("A", ea), ("B", eb)):
            if not fam:
                raise ValueError(f"side {side} has no inputs")
            d = fam[0][0].shape[0]
            n_out = len(fam[0])
            for povm in fam:
                if len(povm) != n_out:
                    raise ValueError(f"side {side}: inputs need equal outcome counts")
                for e in povm:
                    if e.shape != (d, d) or not is_psd(e, POVM_TOL):
                        raise ValueError(f"side {side}: effects must be PSD {d}x{d} matrices")
                if not np.allclose(sum(povm), np.eye(d), atol=POVM_TOL, rtol=0):
                    raise ValueError(f"side {side}: effects do not sum to the identity")

    @property
    def scenario(self) -> tuple[int, int, int, int]:
        return (len(self.effects_a), len(self.effects_b), len(self.effects_a[0]), len(self.effects_b[0]))

    @property
    def dims(self) -> tuple[int, int]:
        return self.effects_a[0][0].shape[0], self.effects_b[0][0].shape[0]

    def to_json(self) -> dict:
        enc = lambda m: {"re": m.real.tolist(), "im": m.imag.tolist()}  # noqa: E731
        return {"a": [[enc(e) for e in p] for p in self.effects_a],
                "b": [[enc(e) for e in p] for p in self.effects_b]}

    @classmethod
    def from_json(cls, doc: dict) -> "MeasurementAssemblage":
        dec = lambda d: np.asarray(d["re"]) + 1j * np.asarray(d.get("im", np.zeros_like(d["re"])))  # noqa: E731
        return cls(tuple(tuple(dec(e) for e in p) for p in doc["a"]),
                   tuple(tuple(dec(e) for e in p) for p in doc["b"]))


def lose_decoherent_action(tau, m: MeasurementAssemblage) -> CondDist:
    """S[ab, xy] = Tr(M^{a|x} (x) N^{b|y} tau)."""
    t = tau.matrix if isinstance(tau, DensityMatrix) else np.asarray(tau, dtype=complex)
    dr, ds = m.dims
    if t.shape != (dr * ds, dr * ds):
        raise ValueError(f"state of shape {t.shape} does not match effects on {dr}x{ds}")
    nx, ny, na, nb = m.scenario
    s = np.zeros((na * nb, nx * ny))
    for x, y in np.ndindex(nx, ny):
        for a, b in np.ndindex(na, nb):
            s[a * nb + b, x * ny + y] = np.real(np.trace(np.kron(m.effects_a[x][a], m.effects_b[y][b]) @ t))
    return CondDist(np.clip(s, 0.0, 1.0), m.scenario)


def _sqrtm_psd(e: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((e + e.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def lose_channel(tau, m: MeasurementAssemblage) -> ChoiMatrix:
    """Choi matrix of the local-operations-with-shared-entanglement channel.

    Alice applies Kraus operators |a><x| (x) L^{a|x} on (A, R) with
    L^{a|x} = sqrt(M^{a|x}); Bob does the same on (B, S); R and S are then
    discarded.
    """
    t = tau.matrix if isinstance(tau, DensityMatrix) else np.asarray(tau, dtype=complex)
    nx, ny, na, nb = m.scenario
    dr, ds = m.dims
    if na != nx or nb != ny:
        raise ValueError("the Kraus construction needs as many outcomes as inputs on each side")
    ka = [np.kron(np.outer(ket(a, na), ket(x, nx)), _sqrtm_psd(m.effects_a[x][a]))
          for x in range(nx) for a in range(na)]
    kb = [np.kron(np.outer(ket(b, nb), ket(y, ny)), _sqrtm_psd(m.effects_b[y][b]))
          for y in range(ny) for b in range(nb)]
    big = SubsystemShape(("A", "B", "R", "S"), (nx, ny, dr, ds))
    grouped = ("A", "R", "B", "S")
    gshape = big.reordered(grouped)

    def fn(rho):
        x = permute_subsystems(np.kron(rho, t), big, grouped)
        out = sum(np.kron(k, q) @ x @ np.kron(k, q).conj().T for k in ka for q in kb)
        return partial_trace(out, gshape, ("A", "B"))

    return choi_from_map(fn, (nx, ny), (na, nb))


# ---------------------------------------------------------------------------
# classical shared randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassicalLosrModel:
    """S = sum_l p_l T_A^l (x) R_B^l with column-stochastic factors."""

    weights: np.ndarray
    factors_a: tuple  # each (na, nx)
    factors_b: tuple  # each (nb, ny)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < -1e-12) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("weights must form a probability vector")
        if not (len(self.factors_a) == len(self.factors_b) == w.size):
            raise ValueError("one factor pair per weight required")
        for f in tuple(self.factors_a) + tuple(self.factors_b):
            f = np.asarray(f)
            if np.any(f < -1e-12) or not np.allclose(f.sum(axis=0), 1.0, atol=1e-9):
                raise ValueError("factors must be column-stochastic")
        object.__setattr__(self, "weights", w)

    @property
    def scenario(self) -> tuple[int, int, int, int]:
        na, nx = np.shape(self.factors_a[0])
        nb, ny = np.shape(self.factors_b[0])
        return (nx, ny, na, nb)

    @classmethod
    def random(cls, rng: np.random.Generator, scenario=(2, 2, 2, 2), k: int = 4) -> "ClassicalLosrModel":
        nx, ny, na, nb = scenario
        w = rng.dirichlet(np.ones(k))
        fa = tuple(rng.dirichlet(np.ones(na), size=nx).T for _ in range(k))
        fb = tuple(rng.dirichlet(np.ones(nb), size=ny).T for _ in range(k))
        return cls(w, fa, fb)


def classical_losr_matrix(model: ClassicalLosrModel) -> CondDist:
    s = sum(p * np.kron(ta, rb) for p, ta, rb in zip(model.weights, model.factors_a, model.factors_b))
    return CondDist(np.clip(s, 0.0, 1.0), model.scenario)


def needs_communication(s: CondDist) -> bool:
    """True when no shared-randomness classical model reproduces ``s``."""
    return not is_local(s).local


# ---------------------------------------------------------------------------
# demonstration
# ---------------------------------------------------------------------------


def tsirelson_assemblage() -> MeasurementAssemblage:
    def pvm(obs):
        return ((np.eye(2) + obs) / 2, (np.eye(2) - obs) / 2)

    b0 = (SIGMA_Z + SIGMA_X) / math.sqrt(2)
    b1 = (SIGMA_Z - SIGMA_X) / math.sqrt(2)
    return MeasurementAssemblage((pvm(SIGMA_Z), pvm(SIGMA_X)), (pvm(b0), pvm(b1)))


def phi_plus() -> np.ndarray:
    return proj((ket([0, 0]) + ket([1, 1])) / math.sqrt(2))


@dataclass(frozen=True)
class Prop3Report:
    chsh: float
    local: bool
    classical_losr_reachable: bool
    lp_status: str
    distance: float
    witness: list | None
    witness_local_bound: float | None
    witness_value: float | None
    distribution: list

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def prop3_demo() -> Prop3Report:
    """Shared phi+ with CHSH-optimal projectors: nonlocal, yet no communication."""
    m = tsirelson_assemblage()
    s = lose_decoherent_action(phi_plus(), m)
    value = bell_value(s, chsh())
    res = is_local(s)
    wit = wval = None
    if res.witness is not None:
        wit = res.witness.coefficients.tolist()
        wval = bell_value(s, res.witness)
    return Prop3Report(float(value), bool(res.local), bool(res.local), res.status, float(res.distance), wit,
                       res.local_bound, wval, s.matrix.tolist())


def random_lose_instance(rng: np.random.Generator) -> tuple[np.ndarray, MeasurementAssemblage]:
    """Random two-qubit state with random projective qubit measurements."""
    from .core import random_density, random_unitary

    def pvm():
        u = random_unitary(2, rng)
        return tuple(u @ proj(ket(i, 2)) @ u.conj().T for i in range(2))

    m = MeasurementAssemblage((pvm(), pvm()), (pvm(), pvm()))
    return random_density(4, rng), m


def save_assemblage(path, m: MeasurementAssemblage) -> None:
    with open(path, "w") as fh:
        json.dump(m.to_json(), fh)


def load_assemblage(path) -> MeasurementAssemblage:
    with open(path) as fh:
        return MeasurementAssemblage.from_json(json.load(fh))


__all__ = [
    "MeasurementAssemblage", "ClassicalLosrModel", "Prop3Report", "lose_decoherent_action", "lose_channel",
    "classical_losr_matrix", "needs_communication", "prop3_demo", "tsirelson_assemblage", "phi_plus",
    "random_lose_instance", "save_assemblage", "load_assemblage", "uniform",
]
