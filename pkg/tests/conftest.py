"""Per-criterion pass/fail summary for the acceptance suite."""

from __future__ import annotations

import re

_CRITERION = re.compile(r"test_acceptance\.py::.*test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    passed_call: set[int] = set()
    failed: set[int] = set()
    titles: dict[int, str] = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            m = _CRITERION.search(getattr(rep, "nodeid", "") or "")
            if not m:
                continue
            num = int(m.group(1))
            titles[num] = m.group(2).replace("_", " ")
            if getattr(rep, "failed", False):
                failed.add(num)
            elif getattr(rep, "passed", False) and rep.when == "call":
                passed_call.add(num)
    if not titles:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(titles):
        verdict = "PASS" if num in passed_call and num not in failed else "FAIL"
        terminalreporter.write_line(
            f"ACCEPTANCE {verdict}  criterion {num}: {titles[num]}")
