"""Collects acceptance outcomes and prints one verdict line per criterion."""
from collections import defaultdict

import pytest

_OUTCOMES: dict[int, list[tuple[str, bool, list[str]]]] = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        _OUTCOMES[mark.args[0]].append((item.name, report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        runs = _OUTCOMES[n]
        ok = all(passed for _, passed, _ in runs)
        details = "; ".join(d for _, _, ds in runs for d in ds)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}")
