import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Run a criterion body, record a PASS/FAIL line for the terminal summary, and re-raise failures."""
    log = request.config.stash[_RESULTS]

    def run(number, body):
        try:
            detail = body()
        except Exception as exc:
            line = f"criterion {number}: FAIL {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            log.append(line)
            print(line)
            raise
        line = f"criterion {number}: PASS {detail}"
        log.append(line)
        print(line)

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
