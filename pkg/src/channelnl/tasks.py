"""Protocols evaluated over channel sets: Bell functionals on Choi matrices,
state interconversion, assisted codes, and bounds on the trace-distance
nonlocality of unitaries.

Each task is linear in the Choi matrix ``J`` of the optimized object, so
every optimum is a single conic program over a compiled set.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .conic import ConicProblem, SolveReport, trace_norm_epigraph
from .core import (CANONICAL, ChoiMatrix, SubsystemShape, choi_from_unitary, depolarizing_choi, ket,
                   max_entangled_vector, permute_subsystems, proj, trace_norm)
from .hierarchy import (DEFAULT_SHAPE, PhaseSymmetry, as_spec, basis_charges, compile_set,
                        full_diagonal_symmetry, is_invariant)
from .polytope import SolverFailure

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_P = 0.9


@dataclass(frozen=True)
class TaskResult:
    value: float
    status: str
    seconds: float
    j: np.ndarray | None = None
    report: SolveReport | None = None


def optimize_linear(objective: np.ndarray, spec, sense: str = "max", shape: SubsystemShape = DEFAULT_SHAPE,
                    symmetry=None, real: bool | None = None, tol: float = DEFAULT_TOL) -> TaskResult:
    """Optimize Tr(J C) over a set; raises :class:`SolverFailure` on failure."""
    c = np.asarray(objective, dtype=complex)
    if not np.allclose(c, c.conj().T, atol=1e-12):
        raise ValueError("objective must be Hermitian")
    if real is None:
        real = bool(np.allclose(c.imag, 0, atol=1e-14))
    if symmetry and not is_invariant(c, shape, symmetry):
        raise ValueError("objective is not invariant under the requested symmetry")
    spec = as_spec(spec)
    t0 = time.perf_counter()
    prob = ConicProblem(f"{sense}[{spec}]")
    cs = compile_set(prob, spec, shape, real=real, symmetry=symmetry)
    expr = cs.j.tr_prod(c)
    prob.maximize(expr) if sense == "max" else prob.minimize(expr)
    rep = prob.solve(tol=tol)
    if rep.status not in ("optimal", "inaccurate"):
        raise SolverFailure(f"{spec}: solver status {rep.status} ({rep.raw_status})", rep)
    return TaskResult(float(rep.objective), rep.status, time.perf_counter() - t0, rep.value(cs.j), rep)


def trace_distance_to_set(matrix: np.ndarray, spec, shape: SubsystemShape = DEFAULT_SHAPE, symmetry=None,
                          real: bool | None = None, tol: float = DEFAULT_TOL) -> TaskResult:
    """min ||matrix - X||_1 over X in the set."""
    m = np.asarray(matrix, dtype=complex)
    if real is None:
        real = bool(np.allclose(m.imag, 0, atol=1e-14))
    if symmetry and not is_invariant(m, shape, symmetry):
        raise ValueError("target is not invariant under the requested symmetry")
    spec = as_spec(spec)
    t0 = time.perf_counter()
    prob = ConicProblem(f"dist[{spec}]")
    cs = compile_set(prob, spec, shape, real=real, symmetry=symmetry)
    t = trace_norm_epigraph(prob, cs.j - m, "tn", real=real, charges=basis_charges(shape, symmetry))
    prob.minimize(t)
    rep = prob.solve(tol=tol)
    if rep.status not in ("optimal", "inaccurate"):
        raise SolverFailure(f"{spec}: solver status {rep.status} ({rep.raw_status})", rep)
    return TaskResult(float(rep.objective), rep.status, time.perf_counter() - t0, rep.value(cs.j), rep)


# ---------------------------------------------------------------------------
# Bell functionals on channels
# ---------------------------------------------------------------------------


def diagonal_omega() -> np.ndarray:
    """sum (-1)^(a+b+xy) |xyab><xyab| on (A0, B0, A1, B1)."""
    d = np.zeros(16)
    for x, y, a, b in itertools.product(range(2), repeat=4):
        d[((x * 2 + y) * 2 + a) * 2 + b] = (-1) ** (a + b + x * y)
    return np.diag(d)


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 <= mu <= 1.0 or math.isnan(mu):
        raise ValueError(f"mu = {mu} outside [0, 1]")
    return mu


@dataclass(frozen=True)
class OmegaFunctional:
    mu: float
    matrix: np.ndarray
    unitary: np.ndarray  # U_mu on A0 B0 (x) 1 on A1 B1
    states: dict

    @property
    def basis_unitary(self) -> np.ndarray:
        """The 4x4 block acting on A0 B0."""
        return np.column_stack([self.states[k] for k in ("phi+", "psi+", "psi-", "phi-")])


def mu_states(mu: float) -> dict:
    mu = _check_mu(mu)
    s, c = math.sqrt(mu), math.sqrt(1 - mu)
    return {
        "phi+": s * ket([0, 0]) + c * ket([1, 1]),
        "phi-": c * ket([0, 0]) - s * ket([1, 1]),
        "psi+": s * ket([0, 1]) + c * ket([1, 0]),
        "psi-": s * ket([1, 0]) - c * ket([0, 1]),
    }


def omega(mu: float) -> OmegaFunctional:
    states = mu_states(mu)
    block = np.column_stack([states[k] for k in ("phi+", "psi+", "psi-", "phi-")])
    u = np.kron(block, np.eye(4))
    m = u @ diagonal_omega() @ u.conj().T
    m = (m + m.conj().T) / 2
    return OmegaFunctional(float(mu), m.real if np.allclose(m.imag, 0) else m, u, states)


# parity of A0 B0 plus independent charges on the outputs
GAMMA_SYMMETRY = (
    PhaseSymmetry({"A0": (0, 1), "B0": (0, 1)}, 2),
    PhaseSymmetry({"A1": (0, 1)}),
    PhaseSymmetry({"B1": (0, 1)}),
)


def gamma(om: OmegaFunctional | float, spec="cptp+lda", tol: float = DEFAULT_TOL, full: bool = False):
    """Maximum of Tr(J Omega_mu) over the set."""
    if not isinstance(om, OmegaFunctional):
        om = omega(om)
    res = optimize_linear(om.matrix, spec, symmetry=GAMMA_SYMMETRY, tol=tol)
    return res if full else res.value


# ---------------------------------------------------------------------------
# State interconversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterconversionInstance:
    mu: float
    p: float = DEFAULT_P

    def __post_init__(self):
        _check_mu(self.mu)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p = {self.p} outside [0, 1]")

    @property
    def rho(self) -> np.ndarray:
        bell_p = (ket([0, 0]) + ket([1, 1])) / math.sqrt(2)
        bell_m = (ket([0, 0]) - ket([1, 1])) / math.sqrt(2)
        return self.p * proj(bell_p) + (1 - self.p) * proj(bell_m)

    @property
    def target(self) -> np.ndarray:
        return math.sqrt(self.mu) * ket([0, 0]) + math.sqrt(1 - self.mu) * ket([1, 1])

    def objective(self) -> np.ndarray:
        """C with <psi| E(rho) |psi> = Tr(J C) for J on (A0, B0, A1, B1)."""
        return np.kron(self.rho.T, proj(self.target)).real

    def entanglement_entropy(self) -> float:
        """Entropy of entanglement of the target (bits)."""
        ps = np.array([self.mu, 1 - self.mu])
        ps = ps[ps > 0]
        return float(-(ps * np.log2(ps)).sum())


INTERCONVERSION_SYMMETRY = (
    PhaseSymmetry({"A0": (0, 1), "B0": (0, -1)}),
    PhaseSymmetry({"A1": (0, 1), "B1": (0, -1)}),
)


def interconversion_fidelity(inst: InterconversionInstance, spec="losr1+lda", tol: float = DEFAULT_TOL,
                             full: bool = False):
    res = optimize_linear(inst.objective(), spec, symmetry=INTERCONVERSION_SYMMETRY, tol=tol)
    return res if full else res.value


# ---------------------------------------------------------------------------
# Assisted codes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodeInstance:
    """Depolarizing channel A1 -> B0 plugged into a superchannel A0 B0 -> A1 B1."""

    mu: float
    spec: str = "super1way"

    def __post_init__(self):
        _check_mu(self.mu)

    def channel(self) -> ChoiMatrix:
        return depolarizing_choi(self.mu, 2, labels=("A1", "B0"))

    def kernel(self) -> np.ndarray:
        """K with entanglement fidelity of Xi[Lambda] equal to Tr(J_Xi K).

        Derived from Tr(phi+ J~)/d with J~ = Tr_{A1B0}[J_Xi (1 (x) J_Lambda^T)].
        """
        d = 2
        phi = np.outer(max_entangled_vector(d), max_entangled_vector(d)) / d  # normalized phi+ on A0 B1
        lam = self.channel().matrix.T
        k = np.kron(phi / d, lam)  # order (A0, B1, A1, B0)
        sh = SubsystemShape(("A0", "B1", "A1", "B0"), (2, 2, 2, 2))
        return permute_subsystems(k, sh, CANONICAL).real

    def unassisted(self) -> float:
        return 1.0 - 0.75 * self.mu


CODES_SYMMETRY = (
    PhaseSymmetry({"A0": (0, 1), "B1": (0, -1)}),
    PhaseSymmetry({"A1": (0, 1), "B0": (0, -1)}),
)


def assisted_fidelity(inst: CodeInstance | float, spec=None, tol: float = DEFAULT_TOL, full: bool = False):
    if not isinstance(inst, CodeInstance):
        inst = CodeInstance(float(inst), spec or "super1way")
    spec = spec or inst.spec
    res = optimize_linear(inst.kernel(), spec, symmetry=CODES_SYMMETRY, tol=tol)
    return res if full else res.value


# ---------------------------------------------------------------------------
# Trace-distance nonlocality bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class N1Bounds:
    lower: float  # Fuchs-van de Graaf lower bound from the outer set
    upper: float  # from an explicit LOSR channel found by seesaw
    direct: float  # min ||J^U - X||_1 over the outer set
    fidelity_outer: float
    fidelity_inner: float
    status: str


def unitary_n1_bounds(u: np.ndarray, spec="losr1+lda", tol: float = DEFAULT_TOL, seesaw_kw: dict | None = None,
                      with_upper: bool = True) -> N1Bounds:
    """Bracket the trace-distance nonlocality of the channel rho -> u rho u^dagger.

    With normalized Choi states j = J / d and F the fidelity of j^U to the
    closest outer-set point, 2 d (1 - sqrt F) <= min ||J^U - X||_1. The
    upper bound uses an explicit LOSR channel: both 2 d sqrt(1 - F_in) and
    its exact trace distance are valid, the smaller is reported.
    """
    from .seesaw import seesaw_optimize

    ju = choi_from_unitary(u).matrix
    d = 4
    res = optimize_linear(ju, spec, tol=tol)
    f_out = min(1.0, max(0.0, res.value / d**2))
    lower = max(0.0, 2 * d * (1 - math.sqrt(f_out)))
    direct = trace_distance_to_set(ju, spec, tol=tol)
    upper, f_in = math.inf, float("nan")
    if with_upper:
        kw = {"K": 2, "restarts": 6, "max_iters": 100}
        kw.update(seesaw_kw or {})
        ss = seesaw_optimize(ju, **kw)
        f_in = min(1.0, ss.value / d**2)
        upper = min(2 * d * math.sqrt(max(0.0, 1 - f_in)), trace_norm(ju - ss.ansatz.matrix()))
    status = "optimal" if res.status == direct.status == "optimal" else "inaccurate"
    return N1Bounds(lower, upper, max(0.0, direct.value), f_out, f_in, status)


def decohered_distance(j: ChoiMatrix, spec="losr1+lda", tol: float = DEFAULT_TOL) -> TaskResult:
    """min ||dephase(J) - X||_1 over the set, exploiting full diagonal symmetry."""
    m = np.diag(np.diag(j.matrix)).real
    return trace_distance_to_set(m, spec, symmetry=full_diagonal_symmetry(), real=True, tol=tol)


def channel_distance(j: ChoiMatrix, spec="losr1+lda", tol: float = DEFAULT_TOL) -> TaskResult:
    """Outer-set lower bound min ||J - X||_1 on the trace-distance nonlocality."""
    return trace_distance_to_set(j.matrix, spec, tol=tol)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

TASKS = ("gamma", "interconversion", "codes")

PANELS = {
    "a": ("gamma", (0.5, 1.0, 0.025), ("losr1+lda", "losr1+npa2", "losr1+nsda", "losr1", "qns", "cptp")),
    "b": ("interconversion", (0.5, 1.0, 0.025), ("losr1+lda", "sep3", "qns", "cptp")),
    "c": ("codes", (0.0, 1.0, 0.05), ("super1way+losr1+lda", "super1way+lda", "super1way+npa2", "super1way+nsda",
                                      "super1way", "cptpp")),
}


def mu_grid(start: float, stop: float, step: float) -> list[float]:
    if step <= 0 or stop < start:
        raise ValueError("grid needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + k * step, 12) for k in range(n + 1)]


@dataclass
class SweepRow:
    task: str
    mu: float
    set: str
    value: float
    status: str
    seconds: float


@dataclass
class SweepResult:
    rows: list
    meta: dict = field(default_factory=dict)

    def table(self, task: str | None = None) -> dict:
        """{mu: {set: value}} for quick inspection."""
        out: dict = {}
        for r in self.rows:
            if task is None or r.task == task:
                out.setdefault(r.mu, {})[r.set] = r.value
        return out


def evaluate(task: str, mu: float, spec: str, p: float = DEFAULT_P, tol: float = DEFAULT_TOL) -> TaskResult:
    if task == "gamma":
        return gamma(mu, spec, tol=tol, full=True)
    if task == "interconversion":
        return interconversion_fidelity(InterconversionInstance(mu, p), spec, tol=tol, full=True)
    if task == "codes":
        return assisted_fidelity(CodeInstance(mu, spec), spec, tol=tol, full=True)
    raise ValueError(f"unknown task {task!r}; choose from {TASKS}")


def _cell(args) -> SweepRow:
    task, mu, spec, p, tol = args
    t0 = time.perf_counter()
    try:
        res = evaluate(task, mu, spec, p, tol)
        return SweepRow(task, mu, spec, res.value, res.status, time.perf_counter() - t0)
    except SolverFailure as exc:
        status = exc.report.status if exc.report is not None else "failed"
        return SweepRow(task, mu, spec, float("nan"), status, time.perf_counter() - t0)
    except Exception as exc:  # row-level failure, the sweep continues
        log.warning("%s mu=%s %s failed: %s", task, mu, spec, exc)
        return SweepRow(task, mu, spec, float("nan"), "error", time.perf_counter() - t0)


def sweep(task: str, mus, sets, out=None, p: float = DEFAULT_P, tol: float = DEFAULT_TOL, workers: int = 1,
          record_time: bool = True, meta: dict | None = None) -> SweepResult:
    """Evaluate every (mu, set) cell; rows ordered by mu then by set."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    sets = [str(as_spec(s)) for s in sets]
    jobs = [(task, float(mu), s, p, tol) for mu in mus for s in sets]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    info = {
        "task": task,
        "mu_grid": [float(m) for m in mus],
        "sets": sets,
        "p": p if task == "interconversion" else None,
        "tol": tol,
        "solver": "clarabel",
        "version": __version__,
        "python": platform.python_version(),
    }
    info.update(meta or {})
    result = SweepResult(rows, info)
    if out is not None:
        write_csv(result, out, record_time)
    return result


def _fmt(v: float) -> str:
    return "nan" if v is None or not math.isfinite(v) else f"{v:.9g}"


def write_csv(result: SweepResult, path, record_time: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "mu", "set", "value", "status", "seconds"])
        for r in result.rows:
            secs = f"{r.seconds:.3f}" if record_time else "0"
            w.writerow([r.task, _fmt(r.mu), r.set, _fmt(r.value), r.status, secs])
    meta = dict(result.meta)
    if not record_time:  # keep the CSV reproducible, wall times go to the sidecar
        meta["row_seconds"] = [round(r.seconds, 3) for r in result.rows]
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def read_csv(path) -> list[SweepRow]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(SweepRow(r["task"], float(r["mu"]), r["set"], float(r["value"]), r["status"],
                                 float(r["seconds"])))
    return rows
