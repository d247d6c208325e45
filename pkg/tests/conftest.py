from __future__ import annotations

import numpy as np
import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
