import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}
    config.addinivalue_line("markers", "acceptance(number): acceptance criterion check")


@pytest.fixture
def verdict(request):
    """Record the outcome line of the acceptance criterion owned by the test."""
    number = request.node.get_closest_marker("acceptance").args[0]
    results = request.config.stash[_RESULTS]

    def record(ok: bool, detail: str):
        results[number] = (bool(ok), detail)
        return ok

    return record


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and report.when == "call" and report.failed:
        results = item.config.stash[_RESULTS]
        number = mark.args[0]
        if number not in results or results[number][0]:
            results[number] = (False, f"error: {call.excinfo.typename}: {call.excinfo.value}"[:200])
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
