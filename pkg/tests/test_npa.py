from __future__ import annotations

import math

import numpy as np
import pytest

from channelnl.conic import ConicProblem
from channelnl.npa import Op, adjoint, canonical, generate_words, max_bell_npa, npa_compile, reduce_word
from channelnl.polytope import chsh, pr_box

TSIRELSON = 2 * math.sqrt(2)  # oracle: cvxpy level-1 moment matrix gives 2.828427125


def test_word_algebra():
    a0, a1, b0 = Op("A", 0, 0), Op("A", 1, 0), Op("B", 0, 0)
    assert reduce_word((a0, a0)) == (a0,)
    assert reduce_word((a0, Op("A", 0, 1))) is None
    assert reduce_word((b0, a0)) == (a0, b0)
    assert adjoint((a0, a1, b0)) == (a1, a0, b0)
    assert canonical((a1, a0)) == (a0, a1)


def test_word_counts():
    sc = (2, 2, 2, 2)
    assert len(generate_words(sc, "1")) == 5
    assert len(generate_words(sc, "1ab")) == 9
    assert len(generate_words(sc, "2")) == 13
    with pytest.raises(ValueError):
        generate_words(sc, "7")
    with pytest.raises(ValueError):
        generate_words((6, 6, 3, 3), "3")


@pytest.mark.parametrize("level", ["1", "1ab", "2", "3"])
def test_tsirelson(level):
    assert max_bell_npa(chsh().coefficients, (2, 2, 2, 2), level) == pytest.approx(TSIRELSON, abs=1e-5)


def test_pr_box_excluded():
    prob = ConicProblem()
    mm = npa_compile(prob, (2, 2, 2, 2), "1")
    prob.add_eq(mm.distribution() - pr_box().vec().reshape(-1, 1), 0.0)
    prob.minimize(mm.distribution().sum())
    assert prob.solve().status == "infeasible"


def test_distribution_normalized():
    prob = ConicProblem()
    mm = npa_compile(prob, (2, 2, 2, 2), "2")
    prob.maximize(mm.distribution().tr_prod(chsh().coefficients.T.reshape(1, -1)))
    rep = prob.solve()
    p = rep.value(mm.distribution()).real.reshape(4, 4)  # rows are (x, y) columns
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-7)
    assert p.min() > -1e-7
