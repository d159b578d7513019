import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 9


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    log = request.config.stash[ACCEPTANCE]

    def record(number: int, title: str, checks: dict, detail: str = "") -> None:
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" | {detail}"
        if failed:
            line += f" | failed: {', '.join(failed)}"
        log[number] = line
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash[ACCEPTANCE]
    ran = [r.nodeid for k in ("passed", "failed", "error") for r in terminalreporter.stats.get(k, [])
           if "test_acceptance.py" in r.nodeid]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in log:
            terminalreporter.write_line(log[n])
        elif any(f"test_criterion_{n}_" in nid for nid in ran):
            terminalreporter.write_line(f"criterion {n} FAIL: did not complete")
        else:
            terminalreporter.write_line(f"criterion {n} NOT RUN")
