import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def report():
    """Record a PASS/FAIL line for an acceptance criterion and print it."""
    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
