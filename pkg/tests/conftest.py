import numpy as np
import pytest

from hypermsg import codes, tanner

REPETITION_H = np.array([[1, 1, 0], [0, 1, 1]], dtype=np.uint8)
HAMMING_H = np.array([[(c >> b) & 1 for c in range(1, 8)] for b in range(3)], dtype=np.uint8)


@pytest.fixture
def repetition():
    return codes.ParityCheckMatrix(REPETITION_H, name="repetition-3")


@pytest.fixture
def hamming():
    return codes.ParityCheckMatrix(HAMMING_H, name="hamming-7-4")


@pytest.fixture
def rep_graph(repetition):
    return tanner.build(repetition)


@pytest.fixture
def hamming_graph(hamming):
    return tanner.build(hamming)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns the verdict so the test can assert on it.

    ``passed=None`` records an informational line that carries no verdict.
    """
    def record(name: str, passed: bool | None, detail: str) -> bool | None:
        tag = "INFO" if passed is None else "PASS" if passed else "FAIL"
        line = f"[{tag}] {name}: {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
