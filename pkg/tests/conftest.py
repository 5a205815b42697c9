from __future__ import annotations

import pytest

# (number, title, passed, detail) collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}")
    n_pass = sum(r[2] for r in ACCEPTANCE_RESULTS)
    terminalreporter.write_line(f"{n_pass}/{len(ACCEPTANCE_RESULTS)} criteria passed")
