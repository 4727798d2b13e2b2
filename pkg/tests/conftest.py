import numpy as np
import pytest

from indexlab.symbols import normal_form

_ACCEPTANCE: list[str] = []


@pytest.fixture
def E():
    return normal_form(1, 1)[0]


@pytest.fixture
def E2():
    return normal_form(2, 1)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    """Record one PASS/FAIL line for the acceptance summary."""
    def record(label: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
