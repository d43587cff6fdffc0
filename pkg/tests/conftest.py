import pytest

_LINES = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args or rep.when != "call":
        return
    lines = item.config.stash.setdefault(_LINES, {})
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    lines[marker.args[0]] = (rep.passed, marker.kwargs.get("title", item.name), detail)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok, title, detail = lines[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
