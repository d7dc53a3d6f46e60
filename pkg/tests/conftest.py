"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

DESCRIPTIONS = {
    1: "trace identity: svd_reference == trace_fast over 1000 random (P, A)",
    2: "gradient suite within 1e-5 of central differences",
    3: "adaptive matrix: identity when balanced, head > 1 > tail, monotone",
    4: "batch confusion norm bounds M/C <= bcn <= M, attained",
    5: "overfitting gap reduced >= 20% on a balanced fine-grained set",
    6: "long tail: ACE beats CE on Few and total; PC does not beat ACE",
    7: "classifier weight norms flatter under ACE",
    8: "classifier retraining improves Few accuracy",
    9: "manifest reruns are bit-identical",
    10: "lambda = 0 reproduces the ce_only trajectory exactly",
}

_outcomes: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _outcomes.setdefault(marker.args[0], []).append((item.name, report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(DESCRIPTIONS):
        results = _outcomes.get(n)
        if results is None:
            continue
        status = "PASS" if all(ok for _, ok, _ in results) else "FAIL"
        tr.write_line(f"criterion {n:2d}: {status}  {DESCRIPTIONS[n]}")
        for name, ok, detail in results:
            if detail or not ok:
                tr.write_line(f"      {'ok  ' if ok else 'FAIL'} {name}: {detail}")
