import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the test still has to assert on its own."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{number:02d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
