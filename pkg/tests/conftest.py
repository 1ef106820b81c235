import numpy as np
import pytest

from cyclelab.scenarios import synthetic

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), f"{title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def short_scenario():
    """Ten-minute four-phase scenario for fast end-to-end tests."""
    return synthetic("int1", route="steady", horizon_s=600, seed=0)


@pytest.fixture(scope="session")
def short_varying():
    return synthetic("int1", route="varying", horizon_s=1200, block_s=300, seed=0)
