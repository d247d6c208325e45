"""Inner bounds on LOSR optima by alternating semidefinite programs.

The ansatz is J = sum_l p_l J_A^l (x) J_B^l with finitely many shared
randomness values. With the B side fixed, the products Y_l = p_l J_A^l form
a convex set (PSD, Tr_{A1} Y_l = t_l 1, t on the simplex), so each half step
is a single SDP; the mirror step treats the B side the same way.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem
from .core import (CANONICAL, ChoiMatrix, SubsystemShape, matrix_from_json, matrix_to_json,
                   partial_trace, permute_subsystems)

log = logging.getLogger(__name__)

GROUPED = ("A0", "A1", "B0", "B1")


@dataclass
class LosrAnsatz:
    weights: np.ndarray
    chois_a: list  # matrices on (A0, A1)
    chois_b: list  # matrices on (B0, B1)
    dims: tuple = (2, 2, 2, 2)  # (dA0, dB0, dA1, dB1)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def shape(self) -> SubsystemShape:
        return SubsystemShape(CANONICAL, self.dims)

    def matrix(self) -> np.ndarray:
        da0, db0, da1, db1 = self.dims
        grouped = SubsystemShape(GROUPED, (da0, da1, db0, db1))
        tot = sum(w * np.kron(a, b) for w, a, b in zip(self.weights, self.chois_a, self.chois_b))
        return permute_subsystems(tot, grouped, CANONICAL)

    def choi(self) -> ChoiMatrix:
        return ChoiMatrix(self.matrix(), self.shape)

    def to_json(self) -> dict:
        da0, db0, da1, db1 = self.dims
        sa = SubsystemShape(("A0", "A1"), (da0, da1))
        sb = SubsystemShape(("B0", "B1"), (db0, db1))
        return {
            "weights": [float(w) for w in self.weights],
            "dims": list(self.dims),
            "chois_a": [matrix_to_json(a, sa, ("A0",)) for a in self.chois_a],
            "chois_b": [matrix_to_json(b, sb, ("B0",)) for b in self.chois_b],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LosrAnsatz":
        return cls(np.asarray(doc["weights"], dtype=float),
                   [matrix_from_json(d)[0] for d in doc["chois_a"]],
                   [matrix_from_json(d)[0] for d in doc["chois_b"]],
                   tuple(doc["dims"]))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


@dataclass
class SeesawResult:
    value: float
    ansatz: LosrAnsatz
    histories: list = field(default_factory=list)  # objective after each half step, per restart
    failures: int = 0
    raw_histories: list = field(default_factory=list)  # value of every solved half step

    def monotone(self, slack: float = 1e-9) -> bool:
        """Non-decreasing objective over the raw half-step values of every restart."""
        return all(np.all(np.diff(h) >= -slack) for h in self.raw_histories if len(h) > 1)


def _normalize_tp(g: np.ndarray, din: int, dout: int) -> np.ndarray:
    """Rescale a PSD matrix on (in, out) so that its input marginal is 1."""
    g = (g + g.conj().T) / 2
    w, v = np.linalg.eigh(g)
    g = (v * np.clip(w, 0.0, None)) @ v.conj().T
    m = np.einsum("iaja->ij", g.reshape(din, dout, din, dout))
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    inv = (v / np.sqrt(np.clip(w, 1e-300, None))) @ v.conj().T
    k = np.kron(inv, np.eye(dout))
    return k @ g @ k.conj().T


def random_local_choi(din: int, dout: int, rng: np.random.Generator, real: bool) -> np.ndarray:
    """Wishart-like PSD block normalized into a CPTP Choi matrix."""
    n = din * dout
    g = rng.standard_normal((n, n))
    if not real:
        g = g + 1j * rng.standard_normal((n, n))
    return _normalize_tp(g @ g.conj().T, din, dout)


def _reduced_objectives(c: np.ndarray, fixed: list, side: str, dims) -> list:
    """M_l with Tr(J C) = sum_l Tr(Y_l M_l) when the other side is fixed."""
    da0, db0, da1, db1 = dims
    da, db = da0 * da1, db0 * db1
    cg = permute_subsystems(c, SubsystemShape(CANONICAL, dims), GROUPED).reshape(da, db, da, db)
    out = []
    for f in fixed:
        if side == "A":  # M = Tr_B[(1 (x) F) C]
            out.append(np.einsum("kl,jlik->ji", f, cg))
        else:
            out.append(np.einsum("kl,ljki->ji", f, cg))
    return out


def _half_step(c, fixed, side, dims, real, tol):
    da0, db0, da1, db1 = dims
    din, dout = (da0, da1) if side == "A" else (db0, db1)
    mats = _reduced_objectives(c, fixed, side, dims)
    prob = ConicProblem(f"seesaw_{side}")
    t = prob.nonneg(len(fixed), "t")
    prob.add_eq(t.sum(), 1.0, tag="simplex")
    loc = SubsystemShape(("in", "out"), (din, dout))
    ys, obj = [], None
    for lam, m in enumerate(mats):
        y = prob.hermitian(din * dout, f"Y{lam}", real=real, psd=True)
        marg = y.partial_trace(loc, ("in",))
        prob.add_eq(marg - t.entry(lam).kron_const(np.eye(din)), 0.0, tag=f"tp{lam}", hermitian=True)
        term = y.tr_prod(m)
        obj = term if obj is None else obj + term
        ys.append(y)
    prob.maximize(obj)
    rep = prob.solve(tol=tol)
    if rep.status not in ("optimal", "inaccurate"):
        return None
    tv = np.clip(rep.value(t).reshape(-1).real, 0.0, None)
    tv = tv / tv.sum()
    new = []
    for lam, y in enumerate(ys):
        yv = rep.value(y)
        if tv[lam] > 1e-9:
            new.append(_normalize_tp(yv / tv[lam], din, dout))
        else:
            new.append(None)
    return tv, new


def _value(c, ans: LosrAnsatz) -> float:
    return float(np.real(np.trace(ans.matrix() @ c)))


def _restart(args):
    c, K, max_iters, tol, seed, dims, real, solver_tol = args
    rng = np.random.default_rng(seed)
    da0, db0, da1, db1 = dims
    chois_a = [random_local_choi(da0, da1, rng, real) for _ in range(K)]
    chois_b = [random_local_choi(db0, db1, rng, real) for _ in range(K)]
    ans = LosrAnsatz(np.full(K, 1.0 / K), chois_a, chois_b, dims)
    best = _value(c, ans)
    history = [best]
    raw = [best]
    for _ in range(max_iters):
        improved = 0.0
        for side in ("A", "B"):
            fixed = ans.chois_b if side == "A" else ans.chois_a
            res = _half_step(c, fixed, side, dims, real, solver_tol)
            if res is None:
                return best, ans, history + [np.nan], raw
            w, new = res
            old = ans.chois_a if side == "A" else ans.chois_b
            # unused components keep their previous Choi
            new = [n if n is not None else o for n, o in zip(new, old)]
            cand = LosrAnsatz(w, new, ans.chois_b, dims) if side == "A" else LosrAnsatz(w, ans.chois_a, new, dims)
            v = _value(c, cand)
            raw.append(v)
            if v >= best:  # reject steps that lose value to rounding
                improved += v - best
                ans, best = cand, v
            history.append(best)
        if improved < tol:
            break
    return best, ans, history, raw


def seesaw_optimize(objective: np.ndarray, K: int = 4, restarts: int = 20, max_iters: int = 200,
                    tol: float = 1e-7, seed: int = 7, dims=(2, 2, 2, 2), real: bool | None = None,
                    solver_tol: float = 1e-11, workers: int = 1) -> SeesawResult:
    """Maximize Tr(J C) over the K-valued LOSR ansatz; best of ``restarts``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    c = np.asarray(objective, dtype=complex)
    c = (c + c.conj().T) / 2
    if real is None:
        real = bool(np.allclose(c.imag, 0))
    if real:
        c = c.real.astype(complex)
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    jobs = [(c, K, max_iters, tol, s, tuple(dims), real, solver_tol) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_restart, jobs))
    else:
        results = [_restart(j) for j in jobs]
    best_val, best_ans, histories, raws, failures = -np.inf, None, [], [], 0
    for val, ans, hist, raw in results:
        raws.append(np.asarray(raw))
        if hist and np.isnan(hist[-1]):
            failures += 1
            hist = hist[:-1]
        histories.append(np.asarray(hist))
        if ans is not None and val > best_val:
            best_val, best_ans = val, ans
    if best_ans is None:
        raise RuntimeError("every seesaw restart failed")
    log.debug("seesaw best %.9f over %d restarts (%d failed)", best_val, restarts, failures)
    return SeesawResult(best_val, best_ans, histories, failures, raws)


def ansatz_marginal_check(ans: LosrAnsatz, tol: float = 1e-8) -> bool:
    j = ans.choi()
    return j.is_cptp(tol) and np.allclose(partial_trace(j.matrix, j.shape, ("A0", "B0")),
                                          np.eye(ans.dims[0] * ans.dims[1]), atol=tol)
