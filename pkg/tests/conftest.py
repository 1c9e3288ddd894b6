import re

import pytest

_CRITERIA: dict[int, tuple[str, str]] = {}
_PATTERN = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the criterion's summary line."""

    def put(text: str) -> None:
        record_property("detail", text)

    return put
