"""A small conic modeling layer with a direct Clarabel bridge.

Decision variables are real. Matrix-valued quantities are carried as
:class:`Affine` expressions ``coef @ x + const`` whose rows are the row-major
entries of a (possibly complex) matrix. Hermitian PSD constraints are split
into the connected blocks of their sparsity pattern; each real block goes to a
real PSD cone directly, each complex block through the embedding
``M -> [[Re M, -Im M], [Im M, Re M]]``.

Standard form handed to the solver::

    minimize    q @ x + constant
    subject to  A @ x + s = b,   s in K

with ``K`` a product of zero, nonnegative, exponential and PSD-triangle cones.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .core import SubsystemShape

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
DEFAULT_TOL = 1e-8


class ConicError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Affine expressions
# ---------------------------------------------------------------------------


def _as_csr(m, ncols: int) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    if m.shape[1] < ncols:
        m = sp.csr_matrix((m.data, m.indices, m.indptr), shape=(m.shape[0], ncols))
    return m


class Affine:
    """Affine map from the real decision vector to a complex matrix."""

    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, coef, const, shape: tuple[int, int]):
        self.coef = sp.csr_matrix(coef, dtype=complex)
        self.const = np.asarray(const, dtype=complex).reshape(-1)
        self.shape = (int(shape[0]), int(shape[1]))
        if self.coef.shape[0] != self.size or self.const.size != self.size:
            raise ValueError("affine expression rows do not match its shape")

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def nvar(self) -> int:
        return self.coef.shape[1]

    @classmethod
    def constant(cls, value, nvar: int = 0) -> "Affine":
        v = np.atleast_2d(np.asarray(value, dtype=complex))
        if v.shape[0] == 1 and np.ndim(value) == 1:
            v = v.T
        return cls(sp.csr_matrix((v.size, nvar), dtype=complex), v.reshape(-1), v.shape)

    # -- arithmetic -------------------------------------------------------

    def _lift(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        v = np.asarray(other, dtype=complex)
        if v.ndim == 0:
            v = np.full(self.shape, complex(v))
        return Affine.constant(v.reshape(self.shape), self.nvar)

    def __add__(self, other):
        o = self._lift(other)
        if o.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {o.shape}")
        n = max(self.nvar, o.nvar)
        return Affine(_as_csr(self.coef, n) + _as_csr(o.coef, n), self.const + o.const, self.shape)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef, -self.const, self.shape)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, Affine) or np.ndim(scalar) != 0:
            raise TypeError("only scalar multiplication is supported")
        return Affine(self.coef * scalar, self.const * scalar, self.shape)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def linmap(self, m, shape) -> "Affine":
        """Apply a linear map on row-major vectorizations."""
        m = sp.csr_matrix(m, dtype=complex)
        return Affine(m @ self.coef, m @ self.const, shape)

    def __matmul__(self, other):
        c = np.asarray(other, dtype=complex)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        r, k = self.shape
        if c.shape[0] != k:
            raise ValueError("inner dimensions differ")
        m = sp.kron(sp.identity(r, format="csr"), sp.csr_matrix(c.T))
        return self.linmap(m, (r, c.shape[1]))

    def __rmatmul__(self, other):
        c = np.atleast_2d(np.asarray(other, dtype=complex))
        r, k = self.shape
        if c.shape[1] != r:
            raise ValueError("inner dimensions differ")
        m = sp.kron(sp.csr_matrix(c), sp.identity(k, format="csr"))
        return self.linmap(m, (c.shape[0], k))

    @property
    def T(self) -> "Affine":
        r, k = self.shape
        idx = np.arange(r * k).reshape(r, k).T.reshape(-1)
        return self.take(idx, (k, r))

    def conj(self) -> "Affine":
        return Affine(self.coef.conj(), self.const.conj(), self.shape)

    @property
    def H(self) -> "Affine":
        return self.T.conj()

    def take(self, idx, shape) -> "Affine":
        idx = np.asarray(idx, dtype=np.int64)
        return Affine(self.coef[idx], self.const[idx], shape)

    def reshape(self, shape) -> "Affine":
        return Affine(self.coef, self.const, shape)

    def trace(self) -> "Affine":
        r, k = self.shape
        if r != k:
            raise ValueError("trace of a non-square expression")
        idx = np.arange(r) * (r + 1)
        m = sp.csr_matrix((np.ones(r), (np.zeros(r, dtype=int), idx)), shape=(1, r * r))
        return self.linmap(m, (1, 1))

    def tr_prod(self, c) -> "Affine":
        """Tr(c @ self) as a scalar expression."""
        c = np.asarray(c, dtype=complex)
        w = c.T.reshape(1, -1)
        return self.linmap(sp.csr_matrix(w), (1, 1))

    def sum(self) -> "Affine":
        return self.linmap(sp.csr_matrix(np.ones((1, self.size))), (1, 1))

    def diag(self) -> "Affine":
        r, k = self.shape
        return self.take(np.arange(r) * (k + 1), (r, 1))

    def entry(self, i: int, j: int = 0) -> "Affine":
        return self.take([i * self.shape[1] + j], (1, 1))

    def vstack(self, *others) -> "Affine":
        parts = [self] + [self._lift(o) if not isinstance(o, Affine) else o for o in others]
        n = max(p.nvar for p in parts)
        coef = sp.vstack([_as_csr(p.coef, n) for p in parts], format="csr")
        const = np.concatenate([p.const for p in parts])
        return Affine(coef, const, (sum(p.size for p in parts), 1))

    # -- subsystem maps ---------------------------------------------------

    def partial_trace(self, shape: SubsystemShape, keep) -> "Affine":
        m, d = partial_trace_map(shape, tuple(keep))
        return self.linmap(m, (d, d))

    def partial_transpose(self, shape: SubsystemShape, subsystems) -> "Affine":
        if isinstance(subsystems, str):
            subsystems = (subsystems,)
        m = partial_transpose_map(shape, tuple(subsystems))
        return self.linmap(m, self.shape)

    def permute(self, shape: SubsystemShape, order) -> "Affine":
        m = permute_map(shape, tuple(order))
        return self.linmap(m, self.shape)

    def kron_const(self, c, left: bool = False) -> "Affine":
        """self (x) c (or c (x) self when ``left``) for a constant matrix c."""
        c = np.atleast_2d(np.asarray(c, dtype=complex))
        r, k = self.shape
        p, q = c.shape
        ca, cb = np.nonzero(c)
        i, j = np.divmod(np.arange(r * k), k)
        if left:
            rr = ca[None, :] * r + i[:, None]
            cc = cb[None, :] * k + j[:, None]
        else:
            rr = i[:, None] * p + ca[None, :]
            cc = j[:, None] * q + cb[None, :]
        dst = (rr * (k * q) + cc).reshape(-1)
        src = np.repeat(np.arange(r * k), ca.size)
        vals = np.tile(c[ca, cb], r * k)
        m = sp.csr_matrix((vals, (dst, src)), shape=(r * p * k * q, r * k))
        return self.linmap(m, (r * p, k * q))

    # -- evaluation -------------------------------------------------------

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        coef = self.coef[:, : x.size] if self.nvar > x.size else _as_csr(self.coef, x.size)
        v = (coef @ x + self.const).reshape(self.shape)
        if np.abs(v.imag).max(initial=0.0) < 1e-14:
            return v.real
        return v

    def is_real(self) -> bool:
        return (not np.any(self.coef.data.imag)) and not np.any(self.const.imag)


def _axes_tensor(shape: SubsystemShape):
    n2 = shape.size * shape.size
    return np.arange(n2, dtype=np.int64).reshape(shape.dims + shape.dims)


def permute_map(shape: SubsystemShape, order: tuple[str, ...]) -> sp.csr_matrix:
    n = len(shape.dims)
    perm = [shape.index(l) for l in order]
    src = _axes_tensor(shape).transpose(perm + [n + p for p in perm]).reshape(-1)
    n2 = src.size
    return sp.csr_matrix((np.ones(n2), (np.arange(n2), src)), shape=(n2, n2))


def partial_transpose_map(shape: SubsystemShape, subsystems: tuple[str, ...]) -> sp.csr_matrix:
    n = len(shape.dims)
    axes = list(range(2 * n))
    for lab in subsystems:
        k = shape.index(lab)
        axes[k], axes[n + k] = axes[n + k], axes[k]
    src = _axes_tensor(shape).transpose(axes).reshape(-1)
    n2 = src.size
    return sp.csr_matrix((np.ones(n2), (np.arange(n2), src)), shape=(n2, n2))


def partial_trace_map(shape: SubsystemShape, keep: tuple[str, ...]) -> tuple[sp.csr_matrix, int]:
    n = len(shape.dims)
    for lab in keep:
        shape.index(lab)
    kept = [k for k in range(n) if shape.labels[k] in keep]
    traced = [k for k in range(n) if shape.labels[k] not in keep]
    grids = np.indices(shape.dims + shape.dims).reshape(2 * n, -1)
    mask = np.ones(grids.shape[1], dtype=bool)
    for k in traced:
        mask &= grids[k] == grids[n + k]
    src = np.nonzero(mask)[0]
    kd = [shape.dims[k] for k in kept]
    d = int(np.prod(kd)) if kept else 1
    if kept:
        r = np.ravel_multi_index(tuple(grids[k][src] for k in kept), kd)
        c = np.ravel_multi_index(tuple(grids[n + k][src] for k in kept), kd)
    else:
        r = c = np.zeros(src.size, dtype=np.int64)
    dst = r * d + c
    m = sp.csr_matrix((np.ones(src.size), (dst, src)), shape=(d * d, shape.size ** 2))
    return m, d


# ---------------------------------------------------------------------------
# Problem builder
# ---------------------------------------------------------------------------


@dataclass
class _Block:
    name: str
    kind: str
    offset: int
    size: int
    meta: dict = field(default_factory=dict)


@dataclass
class _Cone:
    kind: str  # zero | nonneg | exp | psd
    dim: int  # number of rows
    side: int = 0  # PSD matrix side


@dataclass
class _Constraint:
    tag: str | None
    A: sp.csr_matrix  # rows of the slack expression's linear part (s = A x + c)
    c: np.ndarray
    cones: list


@dataclass(frozen=True)
class SolveReport:
    status: str
    objective: float | None
    x: np.ndarray
    duals: dict
    iterations: int
    seconds: float
    gap: float | None = None
    primal_residual: float | None = None
    dual_residual: float | None = None
    raw_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def value(self, expr: Affine) -> np.ndarray:
        return expr.value(self.x)


class ConicProblem:
    """Mutable builder; one owner at a time."""

    def __init__(self, name: str = "problem"):
        self.name = name
        self.nvar = 0
        self.blocks: list[_Block] = []
        self.constraints: list[_Constraint] = []
        self.sense = "min"
        self.objective: Affine | None = None
        self.trivially_infeasible = False

    # -- variables --------------------------------------------------------

    def _new(self, name: str, kind: str, size: int, **meta) -> int:
        off = self.nvar
        self.nvar += size
        self.blocks.append(_Block(name, kind, off, size, meta))
        return off

    def free(self, n: int = 1, name: str = "free") -> Affine:
        off = self._new(name, "free", n)
        coef = sp.csr_matrix((np.ones(n), (np.arange(n), off + np.arange(n))), shape=(n, self.nvar))
        return Affine(coef, np.zeros(n), (n, 1))

    def nonneg(self, n: int = 1, name: str = "nonneg") -> Affine:
        v = self.free(n, name)
        self.blocks[-1].kind = "nonneg"
        self.add_nonneg(v, tag=None)
        return v

    def hermitian(self, d: int, name: str = "X", real: bool = False, charges=None,
                  psd: bool = False) -> Affine:
        """Hermitian (or real symmetric) matrix variable.

        ``charges`` restricts the variable to entries (i, j) with
        ``charges[i] == charges[j]``, i.e. to the commutant of a diagonal
        phase group.
        """
        if charges is None:
            allowed = lambda i, j: True  # noqa: E731
        else:
            ch = list(charges)
            if len(ch) != d:
                raise ValueError("one charge per basis state required")
            allowed = lambda i, j: ch[i] == ch[j]  # noqa: E731
        rows, cols, vals = [], [], []
        k = 0
        pairs = [(i, j) for i in range(d) for j in range(i, d) if allowed(i, j)]
        nparams = sum(1 if (real or i == j) else 2 for i, j in pairs)
        off = self._new(name, "hermitian", nparams, side=d, real=real)
        for i, j in pairs:
            if i == j:
                rows.append(i * d + i); cols.append(off + k); vals.append(1.0)
                k += 1
            elif real:
                rows += [i * d + j, j * d + i]; cols += [off + k] * 2; vals += [1.0, 1.0]
                k += 1
            else:
                rows += [i * d + j, j * d + i, i * d + j, j * d + i]
                cols += [off + k, off + k, off + k + 1, off + k + 1]
                vals += [1.0, 1.0, 1j, -1j]
                k += 2
        coef = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(d * d, self.nvar))
        x = Affine(coef, np.zeros(d * d), (d, d))
        if psd:
            self.add_psd(x, tag=f"{name}>=0")
        return x

    # -- constraints ------------------------------------------------------

    def _push(self, tag, A, c, cones):
        self.constraints.append(_Constraint(tag, sp.csr_matrix(A), np.asarray(c, dtype=float), cones))

    def add_eq(self, lhs, rhs=0.0, tag: str | None = None, hermitian: bool = False) -> None:
        expr = lhs - rhs if isinstance(lhs, Affine) else (-(rhs - lhs))
        if not isinstance(expr, Affine):
            raise TypeError("equality needs at least one affine side")
        r, k = expr.shape
        if hermitian and r == k:
            iu, ju = np.triu_indices(r)
            re_idx = iu * k + ju
            off = iu != ju
            im_idx = re_idx[off]
        else:
            re_idx = np.arange(expr.size)
            im_idx = re_idx
        C = expr.coef
        Ar = sp.vstack([C[re_idx].real, C[im_idx].imag], format="csr")
        cr = np.concatenate([expr.const[re_idx].real, expr.const[im_idx].imag])
        self._add_rows("zero", Ar, cr, tag)

    def add_nonneg(self, expr: Affine, tag: str | None = None) -> None:
        self._add_rows("nonneg", expr.coef.real, expr.const.real, tag)

    def add_le(self, lhs, rhs, tag: str | None = None) -> None:
        """Entrywise real(lhs) <= real(rhs)."""
        if isinstance(rhs, Affine):
            self.add_nonneg(rhs - lhs, tag)
        else:
            self.add_nonneg((-lhs) + rhs, tag)

    def _add_rows(self, kind: str, A, c, tag):
        A = sp.csr_matrix(A)
        A.eliminate_zeros()
        empty = np.diff(A.indptr) == 0
        if np.any(empty):
            bad = np.abs(c[empty]) > 1e-9 if kind == "zero" else c[empty] < -1e-9
            if np.any(bad):
                log.debug("constant constraint violated in %s", tag)
                self.trivially_infeasible = True
            A = A[~empty]
            c = c[~empty]
        if A.shape[0] == 0:
            return
        self._push(tag, A, c, [_Cone(kind, A.shape[0])])

    def add_exp_cone(self, x: Affine, y, z, tag: str | None = None) -> None:
        """(x, y, z) with y exp(x / y) <= z, entrywise over vectors."""
        parts = [e if isinstance(e, Affine) else x._lift(e) for e in (x, y, z)]
        n = max(p.nvar for p in parts)
        m = parts[0].size
        rows, consts = [], []
        for i in range(m):
            for p in parts:
                rows.append(_as_csr(p.coef[i], n).real)
                consts.append(p.const[i].real)
        A = sp.vstack(rows, format="csr")
        self._push(tag, A, np.array(consts), [_Cone("exp", 3) for _ in range(m)])

    def add_psd(self, expr: Affine, tag: str | None = None) -> None:
        """Hermitian PSD constraint, split into independent blocks."""
        d, k = expr.shape
        if d != k:
            raise ValueError("PSD constraint on non-square expression")
        C = expr.coef.tocsr()
        support = (np.diff(C.indptr) > 0) | (np.abs(expr.const) > 0)
        ii, jj = np.divmod(np.nonzero(support)[0], d)
        graph = sp.csr_matrix((np.ones(ii.size), (ii, jj)), shape=(d, d))
        ncomp, labels = connected_components(graph, directed=False)
        rows, consts, cones = [], [], []
        for comp in range(ncomp):
            idx = np.nonzero(labels == comp)[0]
            sub_entries = (idx[:, None] * d + idx[None, :]).reshape(-1)
            if not support[sub_entries].any():
                continue
            sub = expr.take(sub_entries, (idx.size, idx.size))
            A, c, side = _svec_rows(sub)
            rows.append(A)
            consts.append(c)
            cones.append(_Cone("nonneg", 1) if side == 1 else _Cone("psd", A.shape[0], side))
        if not rows:
            return
        n = max(r.shape[1] for r in rows)
        A = sp.vstack([_as_csr(r, n) for r in rows], format="csr")
        self._push(tag, A, np.concatenate(consts), cones)

    # -- objective --------------------------------------------------------

    def maximize(self, expr: Affine) -> None:
        self.sense, self.objective = "max", expr

    def minimize(self, expr: Affine) -> None:
        self.sense, self.objective = "min", expr

    # -- assembly ---------------------------------------------------------

    def standard_form(self) -> dict:
        n = self.nvar
        q = np.zeros(n)
        constant = 0.0
        if self.objective is not None:
            if self.objective.size != 1:
                raise ConicError("objective must be scalar")
            row = _as_csr(self.objective.coef, n).real.toarray().reshape(-1)
            constant = float(self.objective.const.real[0])
            q = row if self.sense == "min" else -row
            constant = constant if self.sense == "min" else -constant
        blocks, bs, cones, tags = [], [], [], []
        start = 0
        for con in self.constraints:
            A = _as_csr(con.A, n)
            blocks.append(-A)
            bs.append(con.c)
            cones.extend(con.cones)
            tags.append((con.tag, start, start + A.shape[0]))
            start += A.shape[0]
        A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
        b = np.concatenate(bs) if bs else np.zeros(0)
        return {"q": q, "constant": constant, "A": A, "b": b, "cones": cones, "tags": tags,
                "sense": self.sense}

    def to_json(self) -> dict:
        f = self.standard_form()
        A = f["A"].tocoo()
        return {
            "name": self.name,
            "sense": f["sense"],
            "q": f["q"].tolist(),
            "constant": f["constant"],
            "A": {"shape": list(A.shape), "rows": A.row.tolist(), "cols": A.col.tolist(),
                  "vals": A.data.tolist()},
            "b": f["b"].tolist(),
            "cones": [{"type": c.kind, "dim": c.dim, "side": c.side} for c in f["cones"]],
            "tags": [list(t) for t in f["tags"]],
            "variables": [{"name": b.name, "kind": b.kind, "offset": b.offset, "size": b.size,
                           "meta": b.meta} for b in self.blocks],
            "trivially_infeasible": self.trivially_infeasible,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    def solve(self, tol: float = DEFAULT_TOL, max_iter: int = 200, backend: str = "clarabel",
              verbose: bool = False) -> SolveReport:
        return solve_standard(self.standard_form() | {"trivially_infeasible": self.trivially_infeasible},
                              tol=tol, max_iter=max_iter, backend=backend, verbose=verbose)


def _svec_rows(sub: Affine) -> tuple[sp.csr_matrix, np.ndarray, int]:
    """Rows of svec(sub) (real case) or svec of its real embedding."""
    k = sub.shape[0]
    C = sub.coef
    c = sub.const
    if sub.is_real():
        ii, jj = np.triu_indices(k)
        order = np.lexsort((ii, jj))  # column-major over the upper triangle
        ii, jj = ii[order], jj[order]
        ent = ii * k + jj
        scale = np.where(ii == jj, 1.0, SQRT2)
        A = sp.diags(scale) @ C[ent].real
        return sp.csr_matrix(A), scale * c[ent].real, k
    n = 2 * k
    ip, jq = np.triu_indices(n)
    order = np.lexsort((ip, jq))
    ip, jq = ip[order], jq[order]
    Cre, Cim = C.real.tocsr(), C.imag.tocsr()
    sel_ent, sel_kind, scale = [], [], []
    for p, q in zip(ip, jq):
        s = 1.0 if p == q else SQRT2
        if p < k and q < k:
            sel_ent.append(p * k + q); sel_kind.append(0); scale.append(s)
        elif p < k <= q:
            sel_ent.append(p * k + (q - k)); sel_kind.append(1); scale.append(-s)
        else:
            sel_ent.append((p - k) * k + (q - k)); sel_kind.append(0); scale.append(s)
    sel_ent = np.array(sel_ent)
    sel_kind = np.array(sel_kind)
    scale = np.array(scale)
    A = sp.vstack([Cre[sel_ent], Cim[sel_ent]], format="csr")
    pick = np.where(sel_kind == 0, np.arange(sel_ent.size), sel_ent.size + np.arange(sel_ent.size))
    A = sp.diags(scale) @ A[pick]
    cvals = np.where(sel_kind == 0, c[sel_ent].real, c[sel_ent].imag) * scale
    return sp.csr_matrix(A), cvals, n


def svec_to_matrix(v: np.ndarray, side: int) -> np.ndarray:
    """Inverse of the column-major upper-triangle svec with sqrt(2) scaling."""
    m = np.zeros((side, side))
    k = 0
    for j in range(side):
        for i in range(j + 1):
            val = v[k] if i == j else v[k] / SQRT2
            m[i, j] = m[j, i] = val
            k += 1
    return m


def embed_hermitian(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def unembed_hermitian(e: np.ndarray) -> np.ndarray:
    k = e.shape[0] // 2
    return (e[:k, :k] + e[k:, k:]) / 2 + 1j * (e[k:, :k] - e[:k, k:]) / 2


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "inaccurate",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve_standard(form: dict, tol: float = DEFAULT_TOL, max_iter: int = 200,
                   backend: str = "clarabel", verbose: bool = False) -> SolveReport:
    n = form["q"].size
    t0 = time.perf_counter()
    if form.get("trivially_infeasible"):
        return SolveReport("infeasible", None, np.zeros(n), {}, 0, time.perf_counter() - t0,
                           raw_status="TriviallyInfeasible")
    full_rows = form["A"].shape[0]
    reduced, keep, consistent = reduce_equalities(form)
    if not consistent:
        return SolveReport("infeasible", None, np.zeros(n), {}, 0, time.perf_counter() - t0,
                           raw_status="InconsistentEqualities")
    if backend == "clarabel":
        rep = _solve_clarabel(reduced, tol, max_iter, verbose)
        if rep[3] == "AlmostSolved":
            # the slower but more accurate factorization usually finishes the job
            retry = _solve_clarabel(reduced, tol, max_iter, verbose, RETRY_SETTINGS)
            if retry[2] == "optimal":
                rep = retry
    elif backend == "cvxpy":
        rep = _solve_cvxpy(reduced, tol, verbose)
    else:
        raise ConicError(f"unknown backend {backend!r}")
    x, z, status, raw, iters, pobj, dobj, rp, rd = rep
    if z is not None:
        zf = np.zeros(full_rows)
        zf[keep] = z
        z = zf
    sign = 1.0 if form["sense"] == "min" else -1.0
    objective = None
    gap = None
    if status in ("optimal", "inaccurate"):
        objective = sign * (float(form["q"] @ x) + form["constant"])
        if pobj is not None and dobj is not None:
            gap = abs(pobj - dobj)
    duals = {}
    if z is not None:
        for tag, a, b in form["tags"]:
            if tag is not None:
                duals[tag] = z[a:b]
    return SolveReport(status, objective, x, duals, iters, time.perf_counter() - t0, gap, rp, rd, raw)


RETRY_SETTINGS = {"direct_solve_method": "qdldl"}
EQ_REDUCE_LIMIT = 6 * 10**7  # dense entries allowed for the rank-revealing QR


def reduce_equalities(form: dict, rtol: float = 1e-10):
    """Drop linearly dependent equality rows.

    Exact duplicates (up to scale) are removed first; the remainder goes
    through a pivoted QR when small enough. Returns the reduced form, the
    kept row indices, and whether the dropped rows were consistent.
    """
    A = sp.csr_matrix(form["A"])
    b = form["b"]
    kinds = np.concatenate([np.full(c.dim, i) for i, c in enumerate(form["cones"])]) if form["cones"] else \
        np.zeros(0, dtype=int)
    is_zero = np.array([form["cones"][i].kind == "zero" for i in kinds], dtype=bool) if kinds.size else \
        np.zeros(0, dtype=bool)
    eq = np.nonzero(is_zero)[0]
    if eq.size == 0:
        return form, np.arange(A.shape[0]), True
    # duplicates: normalize each row by its first nonzero
    seen: dict = {}
    drop = set()
    consistent = True
    for r in eq:
        lo, hi = A.indptr[r], A.indptr[r + 1]
        cols, vals = A.indices[lo:hi], A.data[lo:hi]
        if cols.size == 0:
            continue
        order = np.argsort(cols)
        cols, vals = cols[order], vals[order]
        scale = vals[0]
        key = (cols.tobytes(), np.round(vals / scale, 12).tobytes())
        if key in seen:
            r0, s0 = seen[key]
            if abs(b[r] / scale - b[r0] / s0) > 1e-9 * (1 + abs(b[r0] / s0)):
                consistent = False
            drop.add(r)
        else:
            seen[key] = (r, scale)
    rest = np.array([r for r in eq if r not in drop], dtype=int)
    if rest.size and rest.size * A.shape[1] <= EQ_REDUCE_LIMIT:
        import scipy.linalg as la

        Z = A[rest].toarray()
        _, R, piv = la.qr(Z.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > rtol * max(diag.max(initial=0.0), 1.0)))
        if rank < rest.size:
            indep = rest[np.sort(piv[:rank])]
            dep = np.setdiff1d(rest, indep)
            x0, *_ = np.linalg.lstsq(A[indep].toarray(), b[indep], rcond=None)
            resid = A[dep] @ x0 - b[dep]
            if np.max(np.abs(resid), initial=0.0) > 1e-7 * (1 + np.max(np.abs(b), initial=0.0)):
                consistent = False
            drop.update(dep.tolist())
    if not drop:
        return form, np.arange(A.shape[0]), consistent
    keep = np.array([r for r in range(A.shape[0]) if r not in drop], dtype=int)
    cones = []
    start = 0
    for c in form["cones"]:
        if c.kind == "zero":
            k = sum(1 for r in range(start, start + c.dim) if r not in drop)
            if k:
                cones.append(_Cone("zero", k))
        else:
            cones.append(c)
        start += c.dim
    out = dict(form)
    out.update(A=sp.csc_matrix(A[keep]), b=b[keep], cones=cones)
    return out, keep, consistent


def _solve_clarabel(form, tol, max_iter, verbose, overrides=None):
    import clarabel

    n = form["q"].size
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = min(1e-6, tol * 100)
    # the default regularization stalls complex-embedded SDPs near 1e-7
    settings.static_regularization_proportional = 1e-14
    for key, val in (overrides or {}).items():
        setattr(settings, key, val)
    cones = []
    for c in form["cones"]:
        if c.kind == "zero":
            cones.append(clarabel.ZeroConeT(c.dim))
        elif c.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(c.dim))
        elif c.kind == "exp":
            cones.append(clarabel.ExponentialConeT())
        elif c.kind == "psd":
            cones.append(clarabel.PSDTriangleConeT(c.side))
        else:
            raise ConicError(f"unknown cone {c.kind}")
    cones = _merge_cones(cones, form["cones"], clarabel)
    P = sp.csc_matrix((n, n))
    try:
        solver = clarabel.DefaultSolver(P, form["q"], sp.csc_matrix(form["A"]), form["b"], cones, settings)
        sol = solver.solve()
    except BaseException as exc:  # solver panics surface as exceptions
        log.warning("clarabel failed: %s", exc)
        return np.zeros(n), None, "failed", repr(exc), 0, None, None, None, None
    raw = str(sol.status)
    status = _STATUS.get(raw, "failed")
    x = np.asarray(sol.x)
    rp, rd = float(sol.r_prim), float(sol.r_dual)
    if status == "failed" and raw in ("MaxIterations", "InsufficientProgress", "NumericalError"):
        pobj, dobj = sol.obj_val, sol.obj_val_dual
        if np.isfinite(pobj) and abs(pobj - dobj) < 1e-5 * (1 + abs(pobj)) and max(rp, rd) < 1e-5:
            status = "inaccurate"
    return (x, np.asarray(sol.z), status, raw, int(sol.iterations), float(sol.obj_val),
            float(sol.obj_val_dual), rp, rd)


def _merge_cones(cones, spec, clarabel):
    out = []
    for c, s in zip(cones, spec):
        if out and s.kind in ("zero", "nonneg") and out[-1][0] == s.kind:
            out[-1] = (s.kind, out[-1][1] + s.dim)
        else:
            out.append((s.kind, s.dim if s.kind in ("zero", "nonneg") else c))
    res = []
    for kind, v in out:
        if kind == "zero":
            res.append(clarabel.ZeroConeT(v))
        elif kind == "nonneg":
            res.append(clarabel.NonnegativeConeT(v))
        else:
            res.append(v)
    return res


def _solve_cvxpy(form, tol, verbose):
    """Reference backend: the same standard form through cvxpy."""
    import cvxpy as cp

    n = form["q"].size
    x = cp.Variable(n)
    s = form["b"] - form["A"] @ x
    cons = []
    r = 0
    for c in form["cones"]:
        sl = s[r:r + c.dim]
        if c.kind == "zero":
            cons.append(sl == 0)
        elif c.kind == "nonneg":
            cons.append(sl >= 0)
        elif c.kind == "exp":
            cons.append(cp.constraints.ExpCone(sl[0], sl[1], sl[2]))
        else:
            k = c.side
            U = np.zeros((k * k, c.dim))
            t = 0
            for j in range(k):
                for i in range(j + 1):
                    w = 1.0 if i == j else 1 / SQRT2
                    U[i * k + j, t] = w
                    U[j * k + i, t] = w
                    t += 1
            M = cp.reshape(U @ sl, (k, k), order="C")
            cons.append((M + M.T) / 2 >> 0)
        r += c.dim
    prob = cp.Problem(cp.Minimize(form["q"] @ x), cons)
    try:
        prob.solve(solver="SCS", eps=tol, max_iters=200000, verbose=verbose)
    except cp.error.SolverError as exc:
        return np.zeros(n), None, "failed", repr(exc), 0, None, None, None, None
    raw = prob.status
    status = {"optimal": "optimal", "optimal_inaccurate": "inaccurate", "infeasible": "infeasible",
              "unbounded": "unbounded"}.get(raw, "failed")
    xv = np.zeros(n) if x.value is None else np.asarray(x.value)
    iters = prob.solver_stats.num_iters or 0
    return xv, None, status, raw, int(iters), None, None, None, None


def load_dump(path_or_doc) -> dict:
    doc = path_or_doc
    if not isinstance(doc, dict):
        with open(path_or_doc) as fh:
            doc = json.load(fh)
    a = doc["A"]
    A = sp.csc_matrix((a["vals"], (a["rows"], a["cols"])), shape=tuple(a["shape"]))
    cones = [_Cone(c["type"], c["dim"], c["side"]) for c in doc["cones"]]
    return {"q": np.array(doc["q"], dtype=float), "constant": doc["constant"], "A": A,
            "b": np.array(doc["b"], dtype=float), "cones": cones,
            "tags": [tuple(t) for t in doc["tags"]], "sense": doc["sense"],
            "trivially_infeasible": doc.get("trivially_infeasible", False)}


# ---------------------------------------------------------------------------
# Gadgets
# ---------------------------------------------------------------------------


def trace_norm_epigraph(prob: ConicProblem, m: Affine, name: str = "tn", real: bool = False,
                        charges=None) -> Affine:
    """Scalar t with ||m||_1 <= t at the optimum of any problem minimizing t.

    Uses [[P, m], [m^dagger, Q]] >= 0 with t = (Tr P + Tr Q) / 2. ``charges``
    restricts P and Q like :meth:`ConicProblem.hermitian` (valid when m is
    symmetric under the same phase group).
    """
    d = m.shape[0]
    p = prob.hermitian(d, f"{name}.P", real=real, charges=charges)
    q = prob.hermitian(d, f"{name}.Q", real=real, charges=charges)
    if not isinstance(m, Affine):
        m = Affine.constant(np.asarray(m, dtype=complex), prob.nvar)
    top = _hstack(p, m)
    bottom = _hstack(m.H, q)
    prob.add_psd(_vstack_mat(top, bottom), tag=f"{name}.block")
    return (p.trace() + q.trace()) * 0.5


def _hstack(a: Affine, b: Affine) -> Affine:
    r = a.shape[0]
    ka, kb = a.shape[1], b.shape[1]
    n = max(a.nvar, b.nvar)
    ia = (np.arange(r)[:, None] * (ka + kb) + np.arange(ka)[None, :]).reshape(-1)
    ib = (np.arange(r)[:, None] * (ka + kb) + ka + np.arange(kb)[None, :]).reshape(-1)
    size = r * (ka + kb)
    pa = sp.csr_matrix((np.ones(ia.size), (ia, np.arange(ia.size))), shape=(size, a.size))
    pb = sp.csr_matrix((np.ones(ib.size), (ib, np.arange(ib.size))), shape=(size, b.size))
    coef = pa @ _as_csr(a.coef, n) + pb @ _as_csr(b.coef, n)
    const = pa @ a.const + pb @ b.const
    return Affine(coef, const, (r, ka + kb))


def _vstack_mat(a: Affine, b: Affine) -> Affine:
    if a.shape[1] != b.shape[1]:
        raise ValueError("column counts differ")
    n = max(a.nvar, b.nvar)
    coef = sp.vstack([_as_csr(a.coef, n), _as_csr(b.coef, n)], format="csr")
    return Affine(coef, np.concatenate([a.const, b.const]), (a.shape[0] + b.shape[0], a.shape[1]))


def block_diag(a: Affine, b: Affine) -> Affine:
    """[[a, 0], [0, b]]."""
    z_ab = Affine.constant(np.zeros((a.shape[0], b.shape[1])), 0)
    z_ba = Affine.constant(np.zeros((b.shape[0], a.shape[1])), 0)
    return _vstack_mat(_hstack(a, z_ab), _hstack(z_ba, b))


hstack = _hstack
vstack = _vstack_mat
