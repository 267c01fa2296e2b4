import numpy as np
import pytest

_ACCEPTANCE = []


def record_acceptance(criterion: str, passed: bool, detail: str = ""):
    _ACCEPTANCE.append((criterion, passed, detail))
    print(f"[acceptance] {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def dirichlet_pair(rng, d):
    alpha = rng.uniform(0.05, 3.0)
    return rng.dirichlet(np.full(d, alpha)), rng.dirichlet(np.full(d, alpha))
