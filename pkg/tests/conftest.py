import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cigre():
    from gridcap.netmodel import build_cigre_lv
    return build_cigre_lv(seed=1)


@pytest.fixture(scope="session")
def synthetic():
    from gridcap.netmodel import build_synthetic_feeder
    return build_synthetic_feeder(seed=7)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, in criterion order."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "call") != "call":
                continue
            for name, value in getattr(rep, "user_properties", ()):
                if name == "criterion":
                    number, text = value
                    verdict = "PASS" if rep.passed else "FAIL"
                    lines.append((number, f"criterion {number:>2}: {verdict}  {text}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
