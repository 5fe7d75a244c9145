import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """report(number, ok, detail) records one acceptance line and fails the test when not ok."""

    def report(number, ok, detail, skipped=False):
        if skipped:
            _RESULTS[number] = f"criterion {number:>2}: SKIP  {detail}"
            pytest.skip(detail)
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _RESULTS[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[k])
