import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rs():
    return np.random.default_rng(12345)


# acceptance criterion -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}
CRITERIA = ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8")


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in CRITERIA if c in ACCEPTANCE]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for c in CRITERIA:
        if c in ACCEPTANCE:
            ok, detail = ACCEPTANCE[c]
            terminalreporter.write_line(f"{c} {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"{c} NOT RUN")
