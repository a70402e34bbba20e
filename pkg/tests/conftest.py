import pytest
from hypothesis import settings

# first calls include numba compilation, so wall-clock deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Log one pass/fail line for an acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
