"""Moment-matrix outer approximations of the quantum set of correlations.

Operators are projectors ``A[a|x]`` and ``B[b|y]`` with the last outcome of
each input dropped (Collins-Gisin form). Moment matrices are real symmetric:
the real part of any feasible complex moment matrix is again feasible and
yields the same correlations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic import Affine, ConicProblem

LEVELS = ("1", "1ab", "2", "3")
MAX_WORDS = 400


@dataclass(frozen=True, order=True)
class Op:
    party: str
    x: int
    a: int

    def __repr__(self) -> str:
        return f"{self.party}{self.a}|{self.x}"


Word = tuple  # tuple[Op, ...]


def _reduce_party(ops: tuple) -> tuple | None:
    out: list[Op] = []
    for op in ops:
        if out and out[-1].x == op.x:
            if out[-1].a == op.a:
                continue  # idempotent
            return None  # orthogonal outcomes
        out.append(op)
    return tuple(out)


def reduce_word(word) -> tuple | None:
    """Normal form of a product of projectors, or None when it vanishes."""
    a = _reduce_party(tuple(op for op in word if op.party == "A"))
    b = _reduce_party(tuple(op for op in word if op.party == "B"))
    if a is None or b is None:
        return None
    return a + b


def adjoint(word: tuple) -> tuple:
    a = tuple(op for op in word if op.party == "A")[::-1]
    b = tuple(op for op in word if op.party == "B")[::-1]
    return a + b


def canonical(word: tuple) -> tuple:
    return min(word, adjoint(word))


def generate_words(scenario, level: str) -> list[tuple]:
    nx, ny, na, nb = scenario
    level = str(level)
    if level not in LEVELS:
        raise ValueError(f"unknown NPA level {level!r}; choose from {LEVELS}")
    ops_a = [Op("A", x, a) for x in range(nx) for a in range(na - 1)]
    ops_b = [Op("B", y, b) for y in range(ny) for b in range(nb - 1)]
    letters = ops_a + ops_b
    depth = 1 if level == "1ab" else int(level)
    words: list[tuple] = [()]
    seen = {()}
    for length in range(1, depth + 1):
        for w in itertools.product(letters, repeat=length):
            r = reduce_word(w)
            if r is None or r in seen:
                continue
            seen.add(r)
            words.append(r)
    if level == "1ab":
        for u, v in itertools.product(ops_a, ops_b):
            r = (u, v)
            if r not in seen:
                seen.add(r)
                words.append(r)
    if len(words) > MAX_WORDS:
        raise ValueError(f"moment matrix with {len(words)} words exceeds the cap {MAX_WORDS}")
    return words


@dataclass
class MomentMatrix:
    words: list
    gram: Affine
    monomials: dict  # canonical word -> variable index (identity and zero excluded)
    scenario: tuple
    offset: int

    def moment(self, word) -> Affine | float:
        r = reduce_word(word)
        if r is None:
            return 0.0
        if r == ():
            return 1.0
        return self._var(canonical(r))

    def _var(self, key) -> Affine:
        n = self.gram.nvar
        k = self.offset + self.monomials[key]
        coef = sp.csr_matrix(([1.0], ([0], [k])), shape=(1, n))
        return Affine(coef, [0.0], (1, 1))

    def distribution(self) -> Affine:
        """Column-stacked p(ab|xy) as an affine vector."""
        nx, ny, na, nb = self.scenario
        n = self.gram.nvar
        rows = []
        for x in range(nx):
            for y in range(ny):
                for a in range(na):
                    for b in range(nb):
                        rows.append(_cg_entry(self, a, b, x, y, n))
        coef = sp.vstack([r[0] for r in rows], format="csr")
        const = np.array([r[1] for r in rows])
        return Affine(coef, const, (len(rows), 1))


def _cg_entry(mm: MomentMatrix, a, b, x, y, n):
    """(coef row, const) of p(ab|xy) in terms of Collins-Gisin moments."""
    nx, ny, na, nb = mm.scenario
    terms: dict = {}
    const = 0.0

    def add(word, w):
        nonlocal const
        r = reduce_word(word)
        if r is None:
            return
        if r == ():
            const += w
            return
        key = canonical(r)
        terms[key] = terms.get(key, 0.0) + w

    a_ops = [Op("A", x, a)] if a < na - 1 else None
    b_ops = [Op("B", y, b)] if b < nb - 1 else None
    # expand projector for last outcome as 1 - sum of the others
    a_terms = [((Op("A", x, a),), 1.0)] if a_ops else [((), 1.0)] + [((Op("A", x, k),), -1.0) for k in range(na - 1)]
    b_terms = [((Op("B", y, b),), 1.0)] if b_ops else [((), 1.0)] + [((Op("B", y, k),), -1.0) for k in range(nb - 1)]
    for (wa, ca), (wb, cb) in itertools.product(a_terms, b_terms):
        add(wa + wb, ca * cb)
    cols = [mm.offset + mm.monomials[k] for k in terms]
    vals = list(terms.values())
    row = sp.csr_matrix((vals, ([0] * len(cols), cols)), shape=(1, n))
    return row, const


def npa_compile(prob: ConicProblem, scenario, level="2", tag: str = "npa") -> MomentMatrix:
    """Add a PSD moment matrix at the given level; returns its handle."""
    words = generate_words(scenario, str(level))
    n = len(words)
    entries = {}
    monomials: dict = {}
    for i, u in enumerate(words):
        for j in range(i, n):
            r = reduce_word(adjoint(u) + words[j])
            if r is None:
                key = None
            elif r == ():
                key = ()
            else:
                key = canonical(r)
                if key not in monomials:
                    monomials[key] = len(monomials)
            entries[(i, j)] = key
    prob.free(len(monomials), f"{tag}.moments")
    offset = prob.blocks[-1].offset
    nvar = prob.nvar
    rows, cols, vals = [], [], []
    const = np.zeros(n * n)
    for (i, j), key in entries.items():
        for (r, c) in {(i, j), (j, i)}:
            if key is None:
                continue
            if key == ():
                const[r * n + c] = 1.0
            else:
                rows.append(r * n + c)
                cols.append(offset + monomials[key])
                vals.append(1.0)
    coef = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, nvar))
    gram = Affine(coef, const, (n, n))
    prob.add_psd(gram, tag=f"{tag}.gram")
    return MomentMatrix(words, gram, monomials, tuple(scenario), offset)


def compile_npada(prob: ConicProblem, j: Affine, scenario, level="2", tag: str = "npada") -> MomentMatrix:
    """Constrain diag(J) to the level-``level`` outer approximation of Q."""
    mm = npa_compile(prob, scenario, level, tag=tag)
    prob.add_eq(j.diag() - mm.distribution(), 0.0, tag=tag)
    return mm


def max_bell_npa(coefficients: np.ndarray, scenario, level="1", tol: float = 1e-8) -> float:
    """max sum c[ab, xy] p(ab|xy) over the NPA outer approximation."""
    prob = ConicProblem("npa_bell")
    mm = npa_compile(prob, scenario, level)
    p = mm.distribution()
    prob.maximize(p.tr_prod(np.asarray(coefficients).T.reshape(1, -1)))
    rep = prob.solve(tol=tol)
    # higher levels lack interior points in the projector picture, so
    # AlmostSolved is the usual outcome there
    if rep.status not in ("optimal", "inaccurate"):
        from .polytope import SolverFailure

        raise SolverFailure(f"npa: solver status {rep.status}", rep)
    return float(rep.objective)
