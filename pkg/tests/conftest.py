import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record a numbered acceptance result, print it, then assert it."""
    results = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        results[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE]
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
