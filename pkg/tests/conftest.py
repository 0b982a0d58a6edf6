import numpy as np
import pytest

_verdicts = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        state = "PASS" if report.passed else "FAIL"
        line = f"{state}  [{props['criterion']}] {props['title']}"
        if props.get("detail"):
            line += f"  ({props['detail']})"
        _verdicts.append((props["criterion"], line))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_verdicts):
        terminalreporter.write_line(line)
