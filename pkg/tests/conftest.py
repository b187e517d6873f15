"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_CRITERIA: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    entry = _CRITERIA.setdefault(cid, [title, True, []])
    if rep.failed:
        entry[1] = False
        entry[2].append(item.name)
    elif rep.when == "call" and not rep.passed:
        entry[1] = False


def _order(cid: str):
    return (0, int(cid)) if cid.isdigit() else (1, cid)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=_order):
        title, ok, failed = _CRITERIA[cid]
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'} - {title}"
        if failed:
            line += f" (failed: {', '.join(failed)})"
        terminalreporter.write_line(line)
