import json

import numpy as np
import pytest

from sltcouple.model import two_state, validate_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def chain06():
    return two_state(0.6)


@pytest.fixture(scope="session")
def flat2():
    return two_state(0.5)


@pytest.fixture(scope="session")
def three_state():
    P = [[0.5, 0.3, 0.2], [0.25, 0.45, 0.3], [0.2, 0.35, 0.45]]
    return validate_model(P)


@pytest.fixture
def model_file(tmp_path):
    def write(P, **extra):
        data = {"states": [f"s{i}" for i in range(len(P))], "P": P, **extra}
        path = tmp_path / "model.json"
        path.write_text(json.dumps(data))
        return str(path)

    return write


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
