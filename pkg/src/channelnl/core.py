"""Dense tensor algebra and channel representations.

Choi matrices are unnormalized, inputs first: for a channel ``E`` from
``A0 B0`` to ``A1 B1`` the matrix is ``sum_ij |i><j| (x) E(|i><j|)`` with
subsystems in the canonical order ``A0, B0, A1, B1``. Composite indices are
row-major (first factor most significant), so the diagonal of a dephased Choi
matrix is the column-stacked decoherent action.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-9

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
U_CN = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)

CANONICAL = ("A0", "B0", "A1", "B1")


class ShapeError(ValueError):
    """Raised when matrix and subsystem shapes do not fit together."""


# ---------------------------------------------------------------------------
# Subsystem bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsystemShape:
    """Ordered, labelled local dimensions of a composite system."""

    labels: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.labels) != len(self.dims):
            raise ShapeError("labels and dims differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ShapeError(f"duplicate labels in {self.labels}")
        if any(d < 1 for d in self.dims):
            raise ShapeError("dimensions must be positive")

    @classmethod
    def bipartite(cls, da0=2, db0=2, da1=2, db1=2) -> "SubsystemShape":
        return cls(CANONICAL, (da0, db0, da1, db1))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ShapeError(f"unknown subsystem label {label!r}") from None

    def dim(self, label: str) -> int:
        return self.dims[self.index(label)]

    def sub(self, labels: Iterable[str]) -> "SubsystemShape":
        """Shape restricted to ``labels``, keeping the original order."""
        keep = set(labels)
        for lab in keep:
            self.index(lab)
        pairs = [(l, d) for l, d in zip(self.labels, self.dims) if l in keep]
        return SubsystemShape(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def reordered(self, labels: Sequence[str]) -> "SubsystemShape":
        if sorted(labels) != sorted(self.labels):
            raise ShapeError(f"{labels} is not a permutation of {self.labels}")
        return SubsystemShape(tuple(labels), tuple(self.dim(l) for l in labels))

    def check(self, m: np.ndarray) -> None:
        if m.shape != (self.size, self.size):
            raise ShapeError(f"matrix of shape {m.shape} does not match {self}")


# ---------------------------------------------------------------------------
# Elementary tensor operations
# ---------------------------------------------------------------------------


def kron(*ms) -> np.ndarray:
    """Kronecker product, first factor most significant."""
    if not ms:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, [np.asarray(m) for m in ms])


def ket(index: int | Sequence[int], dims: int | Sequence[int] = 2) -> np.ndarray:
    """Computational basis column vector |i> or |i1 i2 ...>."""
    if np.isscalar(index):
        index, dims = [index], [dims]
    elif np.isscalar(dims):
        dims = [dims] * len(index)
    v = np.zeros(int(np.prod(dims)), dtype=complex)
    v[np.ravel_multi_index(tuple(index), tuple(dims))] = 1.0
    return v


def proj(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v).reshape(-1)
    return np.outer(v, v.conj())


def is_hermitian(m: np.ndarray, tol: float = TOL) -> bool:
    return bool(np.allclose(m, m.conj().T, atol=tol, rtol=0))


def is_unitary(u: np.ndarray, tol: float = TOL) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.allclose(u @ u.conj().T, np.eye(u.shape[0]), atol=tol, rtol=0))


def is_psd(m: np.ndarray, tol: float = TOL) -> bool:
    if not is_hermitian(m, tol):
        return False
    return bool(np.linalg.eigvalsh((m + m.conj().T) / 2).min() >= -tol)


def trace_norm(m: np.ndarray) -> float:
    m = np.asarray(m)
    if is_hermitian(m, 1e-12):
        return float(np.abs(np.linalg.eigvalsh((m + m.conj().T) / 2)).sum())
    return float(np.linalg.svd(m, compute_uv=False).sum())


def _eigh_herm(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=complex)
    return np.linalg.eigh((m + m.conj().T) / 2)


def relative_entropy_matrix(rho: np.ndarray, sigma: np.ndarray, cut: float = 1e-14) -> float:
    """Tr rho (log rho - log sigma) for PSD operators (natural log).

    Returns +inf when the support of ``rho`` is not inside that of ``sigma``.
    """
    wr, vr = _eigh_herm(rho)
    ws, vs = _eigh_herm(sigma)
    pos_r = wr > cut
    first = float(np.sum(wr[pos_r] * np.log(wr[pos_r])))
    # <r_i| log sigma |r_i> weighted by the eigenvalues of rho
    overlap = np.abs(vr[:, pos_r].conj().T @ vs) ** 2
    pos_s = ws > cut
    if np.any(overlap[:, ~pos_s].sum(axis=1) > 1e-10):
        return float("inf")
    second = float(np.sum(wr[pos_r] * (overlap[:, pos_s] @ np.log(ws[pos_s]))))
    return first - second


def _tensor(m: np.ndarray, shape: SubsystemShape) -> np.ndarray:
    shape.check(m)
    return np.asarray(m).reshape(shape.dims + shape.dims)


def partial_trace(m: np.ndarray, shape: SubsystemShape, keep: Iterable[str]) -> np.ndarray:
    """Trace out every subsystem not in ``keep``; kept order follows ``shape``."""
    keep = set(keep)
    for lab in keep:
        shape.index(lab)
    n = len(shape.dims)
    t = _tensor(m, shape)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = [letters[n + k] if shape.labels[k] in keep else rows[k] for k in range(n)]
    out_r = [rows[k] for k in range(n) if shape.labels[k] in keep]
    out_c = [cols[k] for k in range(n) if shape.labels[k] in keep]
    spec = "".join(rows) + "".join(cols) + "->" + "".join(out_r) + "".join(out_c)
    res = np.einsum(spec, t)
    d = int(np.prod([shape.dims[k] for k in range(n) if shape.labels[k] in keep]))
    return res.reshape(d, d)


def partial_transpose(m: np.ndarray, shape: SubsystemShape, subsystems: str | Iterable[str]) -> np.ndarray:
    if isinstance(subsystems, str):
        subsystems = [subsystems]
    n = len(shape.dims)
    t = _tensor(m, shape)
    axes = list(range(2 * n))
    for lab in subsystems:
        k = shape.index(lab)
        axes[k], axes[n + k] = axes[n + k], axes[k]
    return t.transpose(axes).reshape(shape.size, shape.size)


def permute_subsystems(m: np.ndarray, shape: SubsystemShape, order: Sequence[str]) -> np.ndarray:
    """Reorder tensor factors so that the result lives on ``shape.reordered(order)``."""
    new = shape.reordered(order)
    n = len(shape.dims)
    perm = [shape.index(l) for l in order]
    t = _tensor(m, shape).transpose(perm + [n + p for p in perm])
    return t.reshape(new.size, new.size)


def permutation_operator(shape: SubsystemShape, order: Sequence[str]) -> np.ndarray:
    """Unitary P with P X P^dagger == permute_subsystems(X, shape, order)."""
    new = shape.reordered(order)
    idx = np.arange(shape.size).reshape(shape.dims)
    perm = [shape.index(l) for l in order]
    src = idx.transpose(perm).reshape(-1)
    p = np.zeros((new.size, shape.size))
    p[np.arange(new.size), src] = 1.0
    return p


# ---------------------------------------------------------------------------
# Channel and state containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChoiMatrix:
    """Unnormalized Choi matrix together with its subsystem layout.

    ``inputs`` lists the input labels; all other labels are outputs.
    """

    matrix: np.ndarray
    shape: SubsystemShape
    inputs: tuple[str, ...] = ("A0", "B0")

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        self.shape.check(m)
        for lab in self.inputs:
            self.shape.index(lab)

    @property
    def outputs(self) -> tuple[str, ...]:
        return tuple(l for l in self.shape.labels if l not in self.inputs)

    @property
    def d_in(self) -> int:
        return int(np.prod([self.shape.dim(l) for l in self.inputs]))

    @property
    def d_out(self) -> int:
        return int(np.prod([self.shape.dim(l) for l in self.outputs]))

    def input_marginal(self) -> np.ndarray:
        return partial_trace(self.matrix, self.shape, self.inputs)

    def is_cptp(self, tol: float = TOL) -> bool:
        if not is_psd(self.matrix, tol):
            return False
        return bool(np.allclose(self.input_marginal(), np.eye(self.d_in), atol=tol, rtol=0))

    def normalized(self) -> np.ndarray:
        return self.matrix / self.d_in


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    shape: SubsystemShape = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.shape is None:
            n = m.shape[0]
            object.__setattr__(self, "shape", SubsystemShape(("S",), (n,)))
        self.shape.check(m)
        if not is_psd(m, TOL) or abs(np.trace(m) - 1) > TOL:
            raise ValueError("density matrix must be PSD with unit trace")


# ---------------------------------------------------------------------------
# Channel constructors
# ---------------------------------------------------------------------------


def _channel_shape(dims_in: Sequence[int], dims_out: Sequence[int],
                   labels_in: Sequence[str], labels_out: Sequence[str]) -> SubsystemShape:
    return SubsystemShape(tuple(labels_in) + tuple(labels_out), tuple(dims_in) + tuple(dims_out))


def max_entangled_vector(d: int) -> np.ndarray:
    """Unnormalized sum_i |ii>."""
    return np.eye(d, dtype=complex).reshape(-1)


def choi_from_kraus(kraus: Sequence[np.ndarray], dims_in=(2, 2), dims_out=(2, 2),
                    labels_in=("A0", "B0"), labels_out=("A1", "B1")) -> ChoiMatrix:
    din = int(np.prod(dims_in))
    omega = max_entangled_vector(din)
    j = np.zeros((din * int(np.prod(dims_out)),) * 2, dtype=complex)
    for k in kraus:
        k = np.asarray(k, dtype=complex)
        v = np.kron(np.eye(din), k) @ omega
        j += np.outer(v, v.conj())
    return ChoiMatrix(j, _channel_shape(dims_in, dims_out, labels_in, labels_out), tuple(labels_in))


def choi_from_unitary(u: np.ndarray, dims_in=(2, 2), dims_out=None,
                      labels_in=("A0", "B0"), labels_out=("A1", "B1")) -> ChoiMatrix:
    """Rank-one Choi matrix of ``rho -> u rho u^dagger``."""
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u):
        raise ValueError("input is not unitary")
    if dims_out is None:
        dims_out = dims_in
    if u.shape[0] != int(np.prod(dims_in)):
        raise ShapeError("unitary size does not match input dimensions")
    return choi_from_kraus([u], dims_in, dims_out, labels_in, labels_out)


def choi_from_map(fn, dims_in=(2, 2), dims_out=(2, 2),
                  labels_in=("A0", "B0"), labels_out=("A1", "B1")) -> ChoiMatrix:
    """Choi matrix of an arbitrary linear map given as a Python function."""
    din = int(np.prod(dims_in))
    dout = int(np.prod(dims_out))
    j = np.zeros((din * dout, din * dout), dtype=complex)
    for i in range(din):
        for k in range(din):
            e = np.zeros((din, din), dtype=complex)
            e[i, k] = 1.0
            j += np.kron(e, fn(e))
    return ChoiMatrix(j, _channel_shape(dims_in, dims_out, labels_in, labels_out), tuple(labels_in))


def identity_choi(dims=(2, 2), labels_in=("A0", "B0"), labels_out=("A1", "B1")) -> ChoiMatrix:
    return choi_from_unitary(np.eye(int(np.prod(dims))), dims, dims, labels_in, labels_out)


def depolarizing_choi(mu: float, d: int = 2, labels=("in", "out")) -> ChoiMatrix:
    """Choi matrix of rho -> (1 - mu) rho + mu Tr(rho) 1/d."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mixing parameter {mu} outside [0, 1]")
    omega = max_entangled_vector(d)
    j = (1 - mu) * np.outer(omega, omega) + mu * np.eye(d * d) / d
    return ChoiMatrix(j, SubsystemShape(tuple(labels), (d, d)), (labels[0],))


def product_choi(ja: ChoiMatrix, jb: ChoiMatrix, order=CANONICAL) -> ChoiMatrix:
    """Choi matrix of ``E_A (x) E_B`` with ``E_A: A0->A1`` and ``E_B: B0->B1``."""
    labels = ja.shape.labels + jb.shape.labels
    shape = SubsystemShape(labels, ja.shape.dims + jb.shape.dims)
    m = permute_subsystems(np.kron(ja.matrix, jb.matrix), shape, order)
    return ChoiMatrix(m, shape.reordered(order), ja.inputs + jb.inputs)


def local_choi_from_kraus(kraus, din=2, dout=2, side="A") -> ChoiMatrix:
    return choi_from_kraus(kraus, (din,), (dout,), (side + "0",), (side + "1",))


# ---------------------------------------------------------------------------
# Dephasing and decoherent action
# ---------------------------------------------------------------------------


def dephase_matrix(m: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(m))


def dephase(j: ChoiMatrix) -> ChoiMatrix:
    """Choi matrix of D o E o D: off-diagonal entries removed."""
    return ChoiMatrix(dephase_matrix(j.matrix), j.shape, j.inputs)


def decoherent_action(j: ChoiMatrix, tol: float = 1e-7):
    """Stochastic matrix S[ab, xy] = <ab| E(|xy><xy|) |ab>."""
    from .polytope import CondDist

    if not j.is_cptp(tol):
        raise ValueError("decoherent action requires a CPTP Choi matrix")
    order = j.inputs + j.outputs
    m = permute_subsystems(j.matrix, j.shape, order) if tuple(j.shape.labels) != order else j.matrix
    diag = np.real(np.diag(m)).copy()
    din, dout = j.d_in, j.d_out
    s = diag.reshape(din, dout).T
    s[np.abs(s) < 1e-15] = 0.0
    ins = [j.shape.dim(l) for l in j.inputs]
    outs = [j.shape.dim(l) for l in j.outputs]
    if len(ins) == 2 and len(outs) == 2:
        scenario = (ins[0], ins[1], outs[0], outs[1])
    else:
        scenario = (din, 1, dout, 1)
    return CondDist(np.clip(s, 0.0, 1.0), scenario, validate_tol=tol)


def diagonal_choi(s, inputs=("A0", "B0"), outputs=("A1", "B1")) -> ChoiMatrix:
    """Classical channel embedded as a diagonal Choi matrix."""
    nx, ny, na, nb = s.scenario
    shape = SubsystemShape(tuple(inputs) + tuple(outputs), (nx, ny, na, nb))
    return ChoiMatrix(np.diag(s.matrix.T.reshape(-1)).astype(complex), shape, tuple(inputs))


# ---------------------------------------------------------------------------
# Applying channels and superchannels
# ---------------------------------------------------------------------------


def apply_channel(j: ChoiMatrix, rho) -> DensityMatrix | np.ndarray:
    """E(rho) = Tr_in[J (rho^T (x) 1_out)]."""
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if r.shape != (j.d_in, j.d_in):
        raise ShapeError("state does not match channel input")
    order = j.inputs + j.outputs
    m = permute_subsystems(j.matrix, j.shape, order)
    out = m.reshape(j.d_in, j.d_out, j.d_in, j.d_out)
    res = np.einsum("iajb,ij->ab", out, r)
    if isinstance(rho, DensityMatrix):
        labels = j.outputs
        return DensityMatrix(res, SubsystemShape(labels, tuple(j.shape.dim(l) for l in labels)))
    return res


def link_apply(xi: ChoiMatrix, channel: ChoiMatrix) -> ChoiMatrix:
    """Plug ``channel`` (A1 -> B0) into the open slot of ``xi`` (A0 B0 -> A1 B1).

    The result is the Choi matrix of the induced channel A0 -> B1,
    Tr_{A1 B0}[J_xi (1_{A0 B1} (x) J_channel^T)].
    """
    need = set(CANONICAL)
    if set(xi.shape.labels) != need:
        raise ShapeError("superchannel must live on A0, B0, A1, B1")
    if channel.inputs != ("A1",) or channel.outputs != ("B0",):
        raise ShapeError("channel must map A1 to B0")
    if channel.shape.dim("A1") != xi.shape.dim("A1") or channel.shape.dim("B0") != xi.shape.dim("B0"):
        raise ShapeError("slot dimensions differ")
    sh = xi.shape.reordered(("A0", "B1", "A1", "B0"))
    jx = permute_subsystems(xi.matrix, xi.shape, sh.labels)
    je = permute_subsystems(channel.matrix, channel.shape, ("A1", "B0"))
    d_out = sh.dims[0] * sh.dims[1]
    full = np.kron(np.eye(d_out), je.T)
    res = partial_trace(jx @ full, sh, ("A0", "B1"))
    out = SubsystemShape(("A0", "B1"), (sh.dims[0], sh.dims[1]))
    return ChoiMatrix(res, out, ("A0",))


# ---------------------------------------------------------------------------
# Randomness helpers
# ---------------------------------------------------------------------------


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = rank or d
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_choi(dims_in=(2, 2), dims_out=(2, 2), rng: np.random.Generator | None = None,
                n_kraus: int = 3, labels_in=("A0", "B0"), labels_out=("A1", "B1")) -> ChoiMatrix:
    """Random CPTP map from a Haar isometry into output (x) environment."""
    rng = rng if rng is not None else np.random.default_rng()
    din, dout = int(np.prod(dims_in)), int(np.prod(dims_out))
    v = random_unitary(dout * n_kraus, rng)[:, :din]
    kraus = [v[k * dout:(k + 1) * dout, :] for k in range(n_kraus)]
    return choi_from_kraus(kraus, dims_in, dims_out, labels_in, labels_out)


def random_local_choi(din: int, dout: int, rng: np.random.Generator, side: str = "A",
                      n_kraus: int = 2) -> ChoiMatrix:
    return random_choi((din,), (dout,), rng, n_kraus, (side + "0",), (side + "1",))


# ---------------------------------------------------------------------------
# Matrix file format
# ---------------------------------------------------------------------------


def matrix_to_json(m: np.ndarray, shape: SubsystemShape, inputs: Sequence[str] | None = None) -> dict:
    m = np.asarray(m, dtype=complex)
    doc = {
        "dims": list(shape.dims),
        "labels": list(shape.labels),
        "re": m.real.tolist(),
        "im": m.imag.tolist(),
    }
    if inputs is not None:
        doc["inputs"] = list(inputs)
    return doc


def matrix_from_json(doc: dict) -> tuple[np.ndarray, SubsystemShape]:
    shape = SubsystemShape(tuple(doc["labels"]), tuple(doc["dims"]))
    m = np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)
    shape.check(m)
    return m, shape


def save_matrix(path, m: np.ndarray, shape: SubsystemShape, inputs=None) -> None:
    Path(path).write_text(json.dumps(matrix_to_json(m, shape, inputs)))


def load_matrix(path) -> tuple[np.ndarray, SubsystemShape]:
    return matrix_from_json(json.loads(Path(path).read_text()))


def save_choi(path, j: ChoiMatrix) -> None:
    save_matrix(path, j.matrix, j.shape, j.inputs)


def load_choi(path) -> ChoiMatrix:
    doc = json.loads(Path(path).read_text())
    m, shape = matrix_from_json(doc)
    inputs = tuple(doc.get("inputs", [l for l in shape.labels if l.endswith("0")]))
    return ChoiMatrix(m, shape, inputs)
