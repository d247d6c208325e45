"""Bipartite conditional distributions and the local / nonsignaling polytopes.

A :class:`CondDist` stores the stochastic matrix ``S[ab, xy]`` with row index
``ab = a * nb + b`` and column index ``xy = x * ny + y``. Distances to the
local polytope are computed over vertex weights, so no facet description is
needed.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .conic import Affine, ConicProblem, SolveReport

LOCAL_TOL = 1e-7
VERTEX_CAP = 10**6


class SolverFailure(RuntimeError):
    def __init__(self, msg: str, report: SolveReport | None = None):
        super().__init__(msg)
        self.report = report


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class CondDist:
    """Column-stochastic matrix p(ab|xy) for scenario (nx, ny, na, nb)."""

    matrix: np.ndarray
    scenario: tuple[int, int, int, int]
    validate_tol: float = 1e-9

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        nx, ny, na, nb = (int(v) for v in self.scenario)
        object.__setattr__(self, "scenario", (nx, ny, na, nb))
        if m.shape != (na * nb, nx * ny):
            raise ScenarioError(f"matrix shape {m.shape} does not fit scenario {self.scenario}")
        tol = self.validate_tol
        if not np.all(np.isfinite(m)) or m.min() < -tol or m.max() > 1 + tol:
            raise ValueError("entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=tol, rtol=0):
            raise ValueError("columns must sum to one")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_tensor(cls, p: np.ndarray, **kw) -> "CondDist":
        """From an array indexed p[a, b, x, y]."""
        na, nb, nx, ny = p.shape
        return cls(np.asarray(p).reshape(na * nb, nx * ny), (nx, ny, na, nb), **kw)

    def tensor(self) -> np.ndarray:
        nx, ny, na, nb = self.scenario
        return self.matrix.reshape(na, nb, nx, ny)

    def vec(self) -> np.ndarray:
        """Column-stacked entries, i.e. the diagonal of the matching Choi matrix."""
        return self.matrix.T.reshape(-1)

    def marginal_a(self) -> np.ndarray:
        """p(a|x,y) as an array [a, x, y]."""
        return self.tensor().sum(axis=1)

    def marginal_b(self) -> np.ndarray:
        return self.tensor().sum(axis=0)


@dataclass(frozen=True)
class LocalVertexSet:
    vertices: np.ndarray  # (n_vertices, n_ab, n_xy), 0/1 valued
    scenario: tuple[int, int, int, int]

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def matrix(self) -> np.ndarray:
        """Columns are the column-stacked vertices."""
        return self.vertices.transpose(0, 2, 1).reshape(len(self), -1).T


@dataclass(frozen=True)
class BellFunctional:
    coefficients: np.ndarray  # indexed like CondDist.matrix
    scenario: tuple[int, int, int, int]


def local_vertices(scenario, cap: int = VERTEX_CAP) -> LocalVertexSet:
    nx, ny, na, nb = scenario
    if min(scenario) < 1:
        raise ScenarioError("scenario sizes must be positive")
    count = na**nx * nb**ny
    if count > cap:
        raise ScenarioError(f"{count} local vertices exceed the cap {cap}")
    fa = list(itertools.product(range(na), repeat=nx))
    fb = list(itertools.product(range(nb), repeat=ny))
    verts = np.zeros((count, na * nb, nx * ny))
    k = 0
    for f in fa:
        for g in fb:
            for x in range(nx):
                for y in range(ny):
                    verts[k, f[x] * nb + g[y], x * ny + y] = 1.0
            k += 1
    return LocalVertexSet(verts, tuple(scenario))


def pr_box() -> CondDist:
    m = 0.5 * np.array([[1, 1, 1, 0], [0, 0, 0, 1], [0, 0, 0, 1], [1, 1, 1, 0]], dtype=float)
    return CondDist(m, (2, 2, 2, 2))


def uniform(scenario) -> CondDist:
    nx, ny, na, nb = scenario
    return CondDist(np.full((na * nb, nx * ny), 1.0 / (na * nb)), scenario)


def chsh() -> BellFunctional:
    c = np.zeros((4, 4))
    for a, b, x, y in itertools.product(range(2), repeat=4):
        c[a * 2 + b, x * 2 + y] = (-1) ** (a + b) * (-1) ** (x * y)
    return BellFunctional(c, (2, 2, 2, 2))


def bell_value(s: CondDist, f: BellFunctional) -> float:
    if tuple(s.scenario) != tuple(f.scenario):
        raise ScenarioError("functional and distribution scenarios differ")
    return float(np.sum(f.coefficients * s.matrix))


def is_nonsignaling(s: CondDist, tol: float = 1e-8) -> tuple[bool, float]:
    """Both no-signalling conditions; returns (holds, largest violation)."""
    pa = s.marginal_a()  # [a, x, y]
    pb = s.marginal_b()  # [b, x, y]
    va = np.abs(pa - pa[:, :, :1]).max()
    vb = np.abs(pb - pb[:, :1, :]).max()
    viol = float(max(va, vb))
    return viol <= tol, viol


def _check(rep: SolveReport, what: str, allow_inaccurate: bool = False) -> float:
    ok = rep.status == "optimal" or (allow_inaccurate and rep.status == "inaccurate")
    if not ok:
        raise SolverFailure(f"{what}: solver status {rep.status}", rep)
    return float(rep.objective)


def _distance_problem(s: CondDist, kind: str, verts: LocalVertexSet | None = None):
    verts = verts or local_vertices(s.scenario)
    V = verts.matrix()
    target = s.vec()
    prob = ConicProblem(f"nu_{kind}")
    q = prob.nonneg(len(verts), "weights")
    prob.add_eq(q.sum(), 1.0, tag="normalization")
    t = prob.nonneg(target.size, "slack")
    diff = (V @ q) - target.reshape(-1, 1)
    prob.add_le(diff, t)
    prob.add_le(-diff, t)
    if kind == "1":
        prob.minimize(t.sum())
    else:
        nx, ny, na, nb = s.scenario
        u = prob.free(1, "colmax")
        m = na * nb
        for col in range(nx * ny):
            sel = np.zeros((1, target.size))
            sel[0, col * m:(col + 1) * m] = 1.0
            prob.add_le(sel @ t, u)
        prob.minimize(u)
    return prob, q, V


def nu_1(s: CondDist, tol: float = 1e-9, return_report: bool = False):
    """min over local T of sum_ij |S_ij - T_ij|."""
    prob, _, _ = _distance_problem(s, "1")
    rep = prob.solve(tol=tol)
    val = max(0.0, _check(rep, "nu_1"))
    return (val, rep) if return_report else val


def nu_diamond(s: CondDist, tol: float = 1e-9, return_report: bool = False):
    """min over local T of the l1 -> l1 operator norm (max column sum) of S - T."""
    prob, _, _ = _distance_problem(s, "diamond")
    rep = prob.solve(tol=tol)
    val = max(0.0, _check(rep, "nu_diamond"))
    return (val, rep) if return_report else val


def relative_entropy(s: np.ndarray, t: np.ndarray) -> float:
    """sum S (log S - log T) with 0 log 0 = 0 and +inf where T vanishes under S."""
    s = np.asarray(s, dtype=float).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    pos = s > 0
    if np.any(t[pos] <= 0):
        return float("inf")
    return float(np.sum(s[pos] * (np.log(s[pos]) - np.log(t[pos]))))


def nu_relent(s: CondDist, tol: float = 1e-9, return_report: bool = False):
    """min over local T of the classical relative entropy h(S|T), exponential cones."""
    verts = local_vertices(s.scenario)
    V = verts.matrix()
    target = s.vec()
    support = np.nonzero(target > 0)[0]
    prob = ConicProblem("nu_relent")
    q = prob.nonneg(len(verts), "weights")
    prob.add_eq(q.sum(), 1.0, tag="normalization")
    r = prob.free(support.size, "epigraph")
    t_support = V[support] @ q
    prob.add_exp_cone(-r, target[support].reshape(-1, 1), t_support, tag="relent")
    prob.minimize(r.sum())
    rep = prob.solve(tol=tol)
    if rep.status not in ("optimal", "inaccurate"):
        raise SolverFailure(f"nu_relent: solver status {rep.status}", rep)
    if rep.status == "inaccurate":
        raise SolverFailure(f"nu_relent did not converge (gap {rep.gap})", rep)
    val = max(0.0, float(rep.objective))
    return (val, rep) if return_report else val


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[k] / (k + 1), 0.0)


def nu_relent_pg(s: CondDist, iters: int = 20000, tol: float = 1e-12) -> float:
    """Projected-gradient evaluation of nu_relent, independent of the conic layer."""
    V = local_vertices(s.scenario).matrix()
    target = s.vec()
    pos = target > 0
    Vp, sp_ = V[pos], target[pos]

    def f(q):
        t = Vp @ q
        if np.any(t <= 0):
            return np.inf
        return float(np.sum(sp_ * (np.log(sp_) - np.log(t))))

    def grad(q):
        return -Vp.T @ (sp_ / (Vp @ q))

    q = np.full(V.shape[1], 1.0 / V.shape[1])
    y, theta = q.copy(), 1.0
    step = 1.0
    fq = f(q)
    for _ in range(iters):
        g = grad(y)
        fy = f(y)
        while True:
            cand = _project_simplex(y - step * g)
            fc = f(cand)
            d = cand - y
            if fc <= fy + g @ d + (d @ d) / (2 * step):
                break
            step *= 0.5
        if fc > fq:  # restart momentum
            y, theta = q.copy(), 1.0
            continue
        theta_next = (1 + np.sqrt(1 + 4 * theta**2)) / 2
        y = cand + ((theta - 1) / theta_next) * (cand - q)
        y = np.maximum(y, 0.0)
        y /= y.sum()
        if abs(fq - fc) < tol and np.abs(cand - q).max() < 1e-10:
            q, fq = cand, fc
            break
        q, fq, theta = cand, fc, theta_next
        step *= 1.5
    return max(0.0, fq)


@dataclass(frozen=True)
class LocalityResult:
    local: bool
    distance: float
    weights: np.ndarray | None
    witness: BellFunctional | None
    local_bound: float | None
    status: str

    def __bool__(self) -> bool:
        return self.local


def is_local(s: CondDist, tol: float = LOCAL_TOL) -> LocalityResult:
    """LP membership in the local polytope.

    On failure the result carries a functional ``c`` with entries in [-1, 1]
    whose value on ``s`` exceeds its maximum over local vertices.
    """
    verts = local_vertices(s.scenario)
    prob, q, _ = _distance_problem(s, "1", verts)
    rep = prob.solve(tol=1e-9)
    dist = max(0.0, _check(rep, "is_local"))
    if dist <= tol:
        w = np.clip(rep.value(q).reshape(-1), 0.0, None)
        return LocalityResult(True, dist, w / w.sum(), None, None, rep.status)
    # dual LP: max c.s - beta, c.D <= beta for every vertex, |c| <= 1
    V = verts.matrix()
    target = s.vec()
    dual = ConicProblem("local_witness")
    c = dual.free(target.size, "c")
    beta = dual.free(1, "beta")
    dual.add_le(c, np.ones((target.size, 1)))
    dual.add_le(-c, np.ones((target.size, 1)))
    ones = np.ones((len(verts), 1))
    dual.add_le(V.T @ c, beta.kron_const(ones))
    dual.maximize(c.tr_prod(target.reshape(1, -1)) - beta)
    drep = dual.solve(tol=1e-9)
    _check(drep, "is_local witness")
    nx, ny, na, nb = s.scenario
    cvec = drep.value(c).reshape(-1)
    coeffs = cvec.reshape(nx * ny, na * nb).T
    bound = float(np.max(V.T @ cvec))
    return LocalityResult(False, dist, None, BellFunctional(coeffs, s.scenario), bound, rep.status)


def max_bell_local(f: BellFunctional) -> float:
    V = local_vertices(f.scenario).matrix()
    return float(np.max(V.T @ f.coefficients.T.reshape(-1)))


def max_bell_nonsignaling(f: BellFunctional, tol: float = 1e-9) -> float:
    """LP over the nonsignaling polytope."""
    nx, ny, na, nb = f.scenario
    prob = ConicProblem("ns_max")
    p = prob.nonneg(na * nb * nx * ny, "p")  # column-stacked
    add_nonsignaling_constraints(prob, p, f.scenario, normalization=True)
    prob.maximize(p.tr_prod(f.coefficients.T.reshape(1, -1)))
    return _check(prob.solve(tol=tol), "ns_max")


def add_nonsignaling_constraints(prob: ConicProblem, p: Affine, scenario, normalization: bool = False,
                                 tag: str = "ns") -> None:
    """Linear NS equalities on a column-stacked distribution vector ``p``."""
    nx, ny, na, nb = scenario
    m = na * nb
    n = nx * ny * m

    def idx(a, b, x, y):
        return (x * ny + y) * m + a * nb + b

    rows = []
    for x in range(nx):
        for y in range(1, ny):
            for a in range(na):
                r = np.zeros(n)
                for b in range(nb):
                    r[idx(a, b, x, y)] += 1
                    r[idx(a, b, x, 0)] -= 1
                rows.append(r)
    for y in range(ny):
        for x in range(1, nx):
            for b in range(nb):
                r = np.zeros(n)
                for a in range(na):
                    r[idx(a, b, x, y)] += 1
                    r[idx(a, b, 0, y)] -= 1
                rows.append(r)
    if rows:
        prob.add_eq(np.array(rows) @ p, 0.0, tag=tag)
    if normalization:
        cols = np.zeros((nx * ny, n))
        for k in range(nx * ny):
            cols[k, k * m:(k + 1) * m] = 1
        prob.add_eq(cols @ p, np.ones((nx * ny, 1)), tag=f"{tag}.norm")


def add_local_constraints(prob: ConicProblem, p: Affine, scenario, tag: str = "local") -> Affine:
    """p = sum_l q_l vec(D_l) with q on the simplex; returns the weights."""
    verts = local_vertices(scenario)
    q = prob.nonneg(len(verts), f"{tag}.weights")
    prob.add_eq(q.sum(), 1.0, tag=f"{tag}.norm")
    prob.add_eq(p - verts.matrix() @ q, 0.0, tag=tag)
    return q


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------


def save_csv(path, s: CondDist) -> None:
    nx, ny, na, nb = s.scenario
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "x", "y", "p"])
        t = s.tensor()
        for a, b, x, y in itertools.product(range(na), range(nb), range(nx), range(ny)):
            w.writerow([a, b, x, y, repr(float(t[a, b, x, y]))])


def load_csv(path, tol: float = 1e-12) -> CondDist:
    """Read a distribution; column sums are checked in exact rational arithmetic."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["a", "b", "x", "y", "p"]:
            raise ValueError("expected header a,b,x,y,p")
        for row in reader:
            a, b, x, y = (int(row[k]) for k in "abxy")
            rows.append((a, b, x, y, Fraction(row["p"].strip())))
    if not rows:
        raise ValueError("empty distribution file")
    na, nb, nx, ny = (max(r[k] for r in rows) + 1 for k in range(4))
    exact = {}
    for a, b, x, y, p in rows:
        if p < 0:
            raise ValueError(f"negative probability at {(a, b, x, y)}")
        if (a, b, x, y) in exact:
            raise ValueError(f"duplicate entry {(a, b, x, y)}")
        exact[(a, b, x, y)] = p
    for x, y in itertools.product(range(nx), range(ny)):
        total = sum(exact.get((a, b, x, y), Fraction(0)) for a in range(na) for b in range(nb))
        if abs(total - 1) > Fraction(tol):
            raise ValueError(f"column ({x},{y}) sums to {float(total)!r}, not 1")
    t = np.zeros((na, nb, nx, ny))
    for key, p in exact.items():
        t[key] = float(p)
    return CondDist.from_tensor(t)
