"""Shared pytest hooks: one PASS/FAIL line per acceptance criterion."""

import pytest

CRITERIA = {
    1: "capacity sandwich on the five-site path",
    2: "scaled capacity trend toward 1/(2K)",
    3: "resolvent residuals and identities",
    4: "K independent of lambda",
    5: "test flow divergence and value",
    6: "potential engine on random chains",
    7: "simulation against the magic formula",
    8: "condensation at N=80, d=0.05",
    9: "hierarchy library",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    ok = report.passed or (report.when != "call" and not report.failed)
    prev = _outcomes.get(crit, True)
    _outcomes[crit] = prev and ok and not report.skipped


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k, title in CRITERIA.items():
        if k in _outcomes:
            status = "PASS" if _outcomes[k] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {k}: {status}  {title}")
