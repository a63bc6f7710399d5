import numpy as np
import pytest

from ionpulse.quantum_core import AtomModel

#: (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture
def atom():
    return AtomModel()


@pytest.fixture
def per_channel_atom():
    return AtomModel(decay_model="per_channel")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
