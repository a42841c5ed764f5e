import pytest

CRITERIA = {
    1: "handshake conformance under exhaustive interleaving",
    2: "exactly-once delivery under relayer faults",
    3: "ordered channels deliver in send order",
    4: "proof soundness under single-bit mutation",
    5: "token conservation and exact round trips",
    6: "byzantine ledger fault containment",
    7: "equivocation freezes the client",
    8: "timeout-on-close refunds early",
    9: "byte-identical traces for a fixed seed",
}

_results: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion a test establishes")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _results.setdefault(marker.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        outcomes = _results.get(n)
        if not outcomes:
            status = "NOT RUN"
        elif any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIPPED"
        terminalreporter.write_line(f"{status:<8}{n}. {title} ({len(outcomes or [])} tests)")
