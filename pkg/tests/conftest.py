from __future__ import annotations

import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return report
    n, title = mark.args
    if report.when == "setup" and report.passed:
        return report
    if report.when == "setup" or report.when == "call":
        detail = dict(item.user_properties).get("detail", "")
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _VERDICTS[n] = (verdict, title, detail)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[n]
        line = f"criterion {n:2d} {verdict}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
