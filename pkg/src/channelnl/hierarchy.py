"""Constraint compilers for sets of bipartite channels.

All compilers act on a :class:`~channelnl.conic.ConicProblem` and return
affine handles for the physical Choi matrix ``J`` on (A0, B0, A1, B1).

Two optional reductions are threaded through every compiler:

``real``
    Restrict variables to real symmetric matrices. Every constraint map here
    commutes with complex conjugation, so this loses nothing whenever the
    objective is a real symmetric matrix.
``symmetry``
    A list of :class:`PhaseSymmetry` generators. Each describes a group of
    local diagonal unitaries; the constraints are invariant under any such
    group, so when the objective is as well, the variable may be restricted to
    the commutant (entries with matching charges).
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp

from .conic import Affine, ConicProblem, partial_trace_map, permute_map
from .core import CANONICAL, SubsystemShape
from .npa import LEVELS as NPA_LEVELS
from .npa import MomentMatrix, compile_npada
from .polytope import add_local_constraints, add_nonsignaling_constraints

DIM_CAP = 256
DEFAULT_SHAPE = SubsystemShape(CANONICAL, (2, 2, 2, 2))


class DimensionCapError(ValueError):
    pass


# ---------------------------------------------------------------------------
# symmetry bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseSymmetry:
    """Diagonal phase group with integer charges per local basis state.

    ``modulus`` 0 means a U(1) charge, otherwise charges add modulo it.
    Extension copies such as ``B0_2`` inherit the charges of ``B0``.
    """

    charges: dict
    modulus: int = 0

    def label_charges(self, label: str, dim: int) -> np.ndarray:
        c = self.charges.get(base_label(label))
        if c is None:
            return np.zeros(dim, dtype=int)
        c = np.asarray(c, dtype=int)
        if c.size != dim:
            raise ValueError(f"charges for {label} need {dim} entries")
        return c


def base_label(label: str) -> str:
    return label.split("_", 1)[0]


def basis_charges(shape: SubsystemShape, symmetry) -> list | None:
    """Charge tuple of every product basis state (row-major)."""
    if not symmetry:
        return None
    idx = np.indices(shape.dims).reshape(len(shape.dims), -1)
    cols = []
    for gen in symmetry:
        tot = np.zeros(shape.size, dtype=int)
        for k, (lab, d) in enumerate(zip(shape.labels, shape.dims)):
            tot += gen.label_charges(lab, d)[idx[k]]
        if gen.modulus:
            tot %= gen.modulus
        cols.append(tot)
    return list(zip(*(c.tolist() for c in cols)))


def is_invariant(matrix: np.ndarray, shape: SubsystemShape, symmetry, tol: float = 1e-12) -> bool:
    """True when ``matrix`` commutes with every group element."""
    ch = basis_charges(shape, symmetry)
    if ch is None:
        return True
    ids: dict = {}
    key = np.array([ids.setdefault(c, len(ids)) for c in ch])
    mask = key[:, None] != key[None, :]
    return bool(np.all(np.abs(np.asarray(matrix)[mask]) <= tol))


def full_diagonal_symmetry(shape: SubsystemShape = DEFAULT_SHAPE) -> list:
    """Independent U(1) charge per level of every label (forces diagonal J)."""
    gens = []
    for lab, d in zip(shape.labels, shape.dims):
        for level in range(1, d):
            gens.append(PhaseSymmetry({lab: [1 if i == level else 0 for i in range(d)]}))
    return gens


# ---------------------------------------------------------------------------
# set specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HierarchyLevel:
    n: int = 1
    ppt: bool = True
    swap: bool = True
    qns: bool = True
    lda: bool = False
    nsda: bool = False

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("hierarchy level n must be >= 1")


_TOKEN = re.compile(r"^(cptp|cptpp|qns|super1way|lda|nsda|losr(\d+)|sep(\d+)|npa(1ab|1|2|3))$")


@dataclass(frozen=True)
class SetSpec:
    """Intersection of channel sets; see :meth:`parse` for the grammar."""

    qns: bool = False
    losr: int = 0
    sep: int = 0
    super1way: bool = False
    cptpp: bool = False
    lda: bool = False
    nsda: bool = False
    npa: str | None = None

    @classmethod
    def parse(cls, text: str) -> "SetSpec":
        """Parse ``tok+tok+...``.

        Tokens: ``cptp``, ``cptpp``, ``qns``, ``super1way``, ``losr<n>``,
        ``sep<k>``, ``lda``, ``nsda``, ``npa1``, ``npa1ab``, ``npa2``, ``npa3``.
        Every set includes CPTP, so ``lda`` alone means ``cptp+lda``.
        """
        if not isinstance(text, str) or not text.strip():
            raise ValueError("empty set specification")
        kw: dict = {}
        for tok in text.strip().lower().split("+"):
            tok = tok.strip()
            m = _TOKEN.match(tok)
            if m is None:
                raise ValueError(f"unknown set token {tok!r}")
            if tok == "cptp":
                continue
            if m.group(2):
                kw["losr"] = max(kw.get("losr", 0), int(m.group(2)))
                if kw["losr"] < 1:
                    raise ValueError("losr level must be >= 1")
            elif m.group(3):
                kw["sep"] = max(kw.get("sep", 0), int(m.group(3)))
                if kw["sep"] < 1:
                    raise ValueError("sep level must be >= 1")
            elif m.group(4):
                if "npa" in kw and kw["npa"] != m.group(4):
                    raise ValueError("at most one npa level per set")
                kw["npa"] = m.group(4)
            else:
                kw[tok] = True
        return cls(**kw)

    def __str__(self) -> str:
        toks = []
        if self.qns:
            toks.append("qns")
        if self.losr:
            toks.append(f"losr{self.losr}")
        if self.sep:
            toks.append(f"sep{self.sep}")
        if self.super1way:
            toks.append("super1way")
        if self.cptpp:
            toks.append("cptpp")
        if not toks:
            toks.append("cptp")
        if self.lda:
            toks.append("lda")
        if self.nsda:
            toks.append("nsda")
        if self.npa:
            toks.append(f"npa{self.npa}")
        return "+".join(toks)

    def __post_init__(self):
        if self.npa is not None and self.npa not in NPA_LEVELS:
            raise ValueError(f"npa level must be one of {NPA_LEVELS}")


def as_spec(spec) -> SetSpec:
    return spec if isinstance(spec, SetSpec) else SetSpec.parse(str(spec))


# ---------------------------------------------------------------------------
# elementary compilers
# ---------------------------------------------------------------------------


def _identity_marginal(prob: ConicProblem, x: Affine, shape: SubsystemShape, inputs, tag: str) -> None:
    d = int(np.prod([shape.dim(l) for l in inputs]))
    prob.add_eq(x.partial_trace(shape, inputs), np.eye(d), tag=tag, hermitian=True)


def _variable(prob: ConicProblem, shape: SubsystemShape, name: str, real: bool, symmetry) -> Affine:
    return prob.hermitian(shape.size, name, real=real, charges=basis_charges(shape, symmetry), psd=True)


def compile_cptp(prob: ConicProblem, shape: SubsystemShape = DEFAULT_SHAPE, real: bool = False,
                 symmetry=None, name: str = "J") -> Affine:
    """J >= 0 with identity input marginal."""
    j = _variable(prob, shape, name, real, symmetry)
    _identity_marginal(prob, j, shape, ("A0", "B0"), f"{name}.tp")
    return j


def _embed_identity(expr: Affine, expr_shape: SubsystemShape, label: str, dim: int,
                    target: tuple, left: bool = False) -> Affine:
    """expr (x) 1_label / dim, reordered to ``target`` labels."""
    out = expr.kron_const(np.eye(dim) / dim, left=left)
    labels = (label,) + expr_shape.labels if left else expr_shape.labels + (label,)
    dims = (dim,) + expr_shape.dims if left else expr_shape.dims + (dim,)
    tmp = SubsystemShape(labels, dims)
    if labels == tuple(target):
        return out
    return out.permute(tmp, target)


def qns_equalities(prob: ConicProblem, j: Affine, shape: SubsystemShape = DEFAULT_SHAPE,
                   tag: str = "qns", directions=("ab", "ba")) -> None:
    """Marginal factorizations of a quantum nonsignaling Choi matrix.

    ``ab`` forbids A -> B signalling (J_{A0B0B1} = 1_{A0}/d (x) J_{B0B1}),
    ``ba`` forbids B -> A signalling (J_{A0A1B0} = J_{A0A1} (x) 1_{B0}/d).
    """
    if "ab" in directions:
        keep = tuple(l for l in shape.labels if l != "A1")
        lhs = j.partial_trace(shape, keep)
        sub = shape.sub(keep)
        keep_b = tuple(l for l in keep if l != "A0")
        rhs = j.partial_trace(shape, keep_b)
        rhs = _embed_identity(rhs, shape.sub(keep_b), "A0", shape.dim("A0"), sub.labels, left=True)
        prob.add_eq(lhs, rhs, tag=f"{tag}.ab", hermitian=True)
    if "ba" in directions:
        keep = tuple(l for l in shape.labels if l != "B1")
        lhs = j.partial_trace(shape, keep)
        sub = shape.sub(keep)
        keep_a = tuple(l for l in keep if l != "B0")
        rhs = j.partial_trace(shape, keep_a)
        rhs = _embed_identity(rhs, shape.sub(keep_a), "B0", shape.dim("B0"), sub.labels)
        prob.add_eq(lhs, rhs, tag=f"{tag}.ba", hermitian=True)


def compile_qns(prob: ConicProblem, j: Affine, shape: SubsystemShape = DEFAULT_SHAPE,
                tag: str = "qns") -> None:
    qns_equalities(prob, j, shape, tag)


def compile_superchannel(prob: ConicProblem, shape: SubsystemShape = DEFAULT_SHAPE, real: bool = False,
                         symmetry=None, name: str = "Xi") -> Affine:
    """Choi matrices of one-way (B0 cannot influence A1) superchannels.

    Here A0 is the pre-processing input, A1 the pre-processing output fed
    to the channel, B0 the channel output and B1 the final output.
    """
    j = compile_cptp(prob, shape, real, symmetry, name)
    qns_equalities(prob, j, shape, tag=f"{name}.causal", directions=("ba",))
    return j


def _scenario(shape: SubsystemShape) -> tuple:
    return (shape.dim("A0"), shape.dim("B0"), shape.dim("A1"), shape.dim("B1"))


def compile_lda(prob: ConicProblem, j: Affine, scenario, tag: str = "lda") -> Affine:
    """Decoherent action in the local polytope; returns the vertex weights."""
    return add_local_constraints(prob, j.diag(), scenario, tag=tag)


def compile_nsda(prob: ConicProblem, j: Affine, scenario, tag: str = "nsda") -> None:
    add_nonsignaling_constraints(prob, j.diag(), scenario, normalization=False, tag=tag)


# ---------------------------------------------------------------------------
# LOSR outer hierarchy
# ---------------------------------------------------------------------------


def extension_shape(n: int, shape: SubsystemShape = DEFAULT_SHAPE) -> SubsystemShape:
    labels = list(shape.labels)
    dims = list(shape.dims)
    for i in range(2, n + 1):
        labels += [f"B0_{i}", f"B1_{i}"]
        dims += [shape.dim("B0"), shape.dim("B1")]
    return SubsystemShape(tuple(labels), tuple(dims))


def _copy_labels(i: int) -> tuple[str, str]:
    return ("B0", "B1") if i == 1 else (f"B0_{i}", f"B1_{i}")


def compile_losr_outer(prob: ConicProblem, level: HierarchyLevel | int = 1,
                       shape: SubsystemShape = DEFAULT_SHAPE, real: bool = False, symmetry=None,
                       cap: int = DIM_CAP, name: str = "X", return_extension: bool = False):
    """Outer approximation of LOSR channels at extension level ``n``.

    X lives on A0 B0 A1 B1 B0_2 B1_2 ... B0_n B1_n. Constraints: X >= 0,
    identity A0B0 marginal, invariance under swapping each copy with the
    last one, PPT on the last copy, and the two nonsignaling-type marginal
    conditions on the extension. Returns J = X_{A0B0A1B1}.
    """
    if isinstance(level, int):
        level = HierarchyLevel(level)
    n = level.n
    xs = extension_shape(n, shape)
    if xs.size > cap:
        raise DimensionCapError(f"extension dimension {xs.size} exceeds the cap {cap}")
    x = _variable(prob, xs, name, real, symmetry)
    _identity_marginal(prob, x, xs, ("A0", "B0"), f"{name}.tp")
    last = _copy_labels(n)
    if level.swap:
        for i in range(1, n):
            ci = _copy_labels(i)
            swap = {ci[0]: last[0], ci[1]: last[1], last[0]: ci[0], last[1]: ci[1]}
            order = tuple(swap.get(l, l) for l in xs.labels)
            prob.add_eq(x - x.permute(xs, order), 0.0, tag=f"{name}.sym{i}", hermitian=True)
    if level.ppt:
        prob.add_psd(x.partial_transpose(xs, last), tag=f"{name}.ppt")
    if level.qns:
        # Tr_{B1^n} X = Tr_{B0^n B1^n} X (x) 1_{B0^n} / d
        keep1 = tuple(l for l in xs.labels if l != last[1])
        lhs = x.partial_trace(xs, keep1)
        keep0 = tuple(l for l in keep1 if l != last[0])
        rhs = _embed_identity(x.partial_trace(xs, keep0), xs.sub(keep0), last[0], xs.dim(last[0]), keep1)
        prob.add_eq(lhs, rhs, tag=f"{name}.cons1", hermitian=True)
        # Tr_{A1} X = 1_{A0} / d (x) Tr_{A0 A1} X
        keep2 = tuple(l for l in xs.labels if l != "A1")
        lhs = x.partial_trace(xs, keep2)
        keep3 = tuple(l for l in keep2 if l != "A0")
        rhs = _embed_identity(x.partial_trace(xs, keep3), xs.sub(keep3), "A0", xs.dim("A0"), keep2, left=True)
        prob.add_eq(lhs, rhs, tag=f"{name}.cons2", hermitian=True)
    j = x if n == 1 else x.partial_trace(xs, shape.labels)
    scen = _scenario(shape)
    if level.lda:
        compile_lda(prob, j, scen, tag=f"{name}.lda")
    if level.nsda:
        compile_nsda(prob, j, scen, tag=f"{name}.nsda")
    if return_extension:
        return j, x, xs
    return j


# ---------------------------------------------------------------------------
# DPS outer approximation of separable Choi matrices
# ---------------------------------------------------------------------------


def bose_isometry(d: int, k: int) -> tuple[sp.csr_matrix, list]:
    """Isometry from Sym^k(C^d) into (C^d)^(x)k and the multiset labels."""
    multisets = list(itertools.combinations_with_replacement(range(d), k))
    rows, cols, vals = [], [], []
    for c, ms in enumerate(multisets):
        perms = set(itertools.permutations(ms))
        w = 1.0 / np.sqrt(len(perms))
        for p in perms:
            r = 0
            for i in p:
                r = r * d + i
            rows.append(r)
            cols.append(c)
            vals.append(w)
    iso = sp.csr_matrix((vals, (rows, cols)), shape=(d**k, len(multisets)))
    return iso, multisets


def _sym_dim(d: int, k: int) -> int:
    return factorial(d + k - 1) // (factorial(k) * factorial(d - 1))


def compile_sep_dps(prob: ConicProblem, k: int = 1, shape: SubsystemShape = DEFAULT_SHAPE,
                    with_cptp_factors: bool = False, cptp: bool = True, real: bool = False,
                    symmetry=None, cap: int = DIM_CAP, name: str = "Y") -> Affine:
    """DPS level-k outer approximation of matrices separable across A|B.

    Parties are the labels starting with ``A`` and with ``B``. The
    extension is taken Bose-symmetric on the k copies of B, which makes
    partial transposition of A equivalent to that of any set of B copies.
    ``cptp`` adds the identity input marginal (needs A0, B0 labels);
    ``with_cptp_factors`` additionally forces the A-side factor to be
    trace preserving on the extension and imposes B -> A nonsignalling.
    """
    if k < 1:
        raise ValueError("DPS level must be >= 1")
    a_labels = tuple(l for l in shape.labels if l.startswith("A"))
    b_labels = tuple(l for l in shape.labels if l.startswith("B"))
    if not a_labels or not b_labels or len(a_labels) + len(b_labels) != len(shape.labels):
        raise ValueError("shape must split into A* and B* labels")
    da = int(np.prod([shape.dim(l) for l in a_labels]))
    db = int(np.prod([shape.dim(l) for l in b_labels]))
    if da * db**k > cap:
        raise DimensionCapError(f"extension dimension {da * db**k} exceeds the cap {cap}")
    iso, multisets = bose_isometry(db, k)
    ns = len(multisets)
    ys = SubsystemShape(a_labels + ("Bsym",), tuple(shape.dim(l) for l in a_labels) + (ns,))
    charges = None
    if symmetry:
        a_shape = shape.sub(a_labels)
        b_shape = shape.sub(b_labels)
        ca = basis_charges(a_shape, symmetry)
        cb = basis_charges(b_shape, symmetry)
        charges = []
        for ia in range(da):
            for ms in multisets:
                tot = []
                for g, gen in enumerate(symmetry):
                    v = ca[ia][g] + sum(cb[i][g] for i in ms)
                    tot.append(v % gen.modulus if gen.modulus else v)
                charges.append(tuple(tot))
    y = prob.hermitian(da * ns, name, real=real, charges=charges, psd=True)
    prob.add_psd(y.partial_transpose(ys, a_labels), tag=f"{name}.ppt")
    # physical marginal: (1_A (x) P) Y (1_A (x) P)^T, trace out copies 2..k
    m = sp.kron(sp.identity(da, format="csr"), iso, format="csr")
    lift = sp.kron(m, m, format="csr")  # row-major vec of M Y M^T (iso is real)
    copy_labels = [f"{l}_{i}" if i > 1 else l for i in range(1, k + 1) for l in b_labels]
    xs = SubsystemShape(a_labels + tuple(copy_labels),
                        tuple(shape.dim(l) for l in a_labels) + tuple(shape.dim(l) for l in b_labels) * k)
    tr, dkeep = partial_trace_map(xs, a_labels + b_labels)
    grouped = SubsystemShape(a_labels + b_labels, tuple(shape.dim(l) for l in a_labels + b_labels))
    perm = permute_map(grouped, shape.labels)
    j = y.linmap(perm @ tr @ lift, (dkeep, dkeep))
    if cptp:
        _identity_marginal(prob, j, shape, ("A0", "B0"), f"{name}.tp")
    if with_cptp_factors:
        if "A1" not in a_labels:
            raise ValueError("CPTP factors need an A1 output label")
        keep = tuple(l for l in ys.labels if l != "A1")
        lhs = y.partial_trace(ys, keep)
        keep_b = tuple(l for l in keep if l != "A0")
        rhs = _embed_identity(y.partial_trace(ys, keep_b), ys.sub(keep_b), "A0", ys.dim("A0"), keep, left=True)
        prob.add_eq(lhs, rhs, tag=f"{name}.factorA", hermitian=True)
        qns_equalities(prob, j, shape, tag=f"{name}.factorB", directions=("ba",))
    return j


# ---------------------------------------------------------------------------
# composite sets
# ---------------------------------------------------------------------------


@dataclass
class CompiledSet:
    spec: SetSpec
    shape: SubsystemShape
    j: Affine
    extension: Affine | None = None
    weights: Affine | None = None
    moments: MomentMatrix | None = None
    extras: dict = field(default_factory=dict)


def compile_set(prob: ConicProblem, spec, shape: SubsystemShape = DEFAULT_SHAPE, real: bool = False,
                symmetry=None, cap: int = DIM_CAP, name: str = "J") -> CompiledSet:
    """Compile an intersection of sets and return the shared Choi handle."""
    spec = as_spec(spec)
    scen = _scenario(shape)
    ext = None
    j = None
    if spec.losr:
        lvl = HierarchyLevel(spec.losr)
        j, ext, _ = compile_losr_outer(prob, lvl, shape, real, symmetry, cap, name=f"{name}.losr",
                                       return_extension=True)
    if spec.sep:
        js = compile_sep_dps(prob, spec.sep, shape, real=real, symmetry=symmetry, cap=cap,
                             cptp=j is None, name=f"{name}.sep")
        if j is None:
            j = js
        else:
            prob.add_eq(j, js, tag=f"{name}.sep_link", hermitian=True)
    if j is None:
        j = compile_cptp(prob, shape, real, symmetry, name)
    if spec.qns and not spec.losr:
        qns_equalities(prob, j, shape, tag=f"{name}.qns")
    if (spec.super1way or spec.cptpp) and not (spec.qns or spec.losr):
        # CPTP-preserving maps: the output channel slot B0 cannot reach A1
        qns_equalities(prob, j, shape, tag=f"{name}.causal", directions=("ba",))
    out = CompiledSet(spec, shape, j, extension=ext)
    if spec.lda:
        out.weights = compile_lda(prob, j, scen, tag=f"{name}.lda")
    if spec.nsda:
        compile_nsda(prob, j, scen, tag=f"{name}.nsda")
    if spec.npa:
        out.moments = compile_npada(prob, j, scen, spec.npa, tag=f"{name}.npa")
    return out


def membership(matrix: np.ndarray, spec, shape: SubsystemShape = DEFAULT_SHAPE, tol: float = 1e-8,
               real: bool | None = None):
    """Feasibility of ``J = matrix`` within a set; returns the solve report."""
    matrix = np.asarray(matrix)
    if real is None:
        real = bool(np.allclose(matrix.imag, 0))
    prob = ConicProblem(f"member[{as_spec(spec)}]")
    cs = compile_set(prob, spec, shape, real=real)
    prob.add_eq(cs.j, matrix, tag="target", hermitian=True)
    return prob.solve(tol=tol)
