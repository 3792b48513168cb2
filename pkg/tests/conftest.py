import pytest

CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; printed again in the summary."""
    lines = request.config.stash.setdefault(CRITERIA, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
