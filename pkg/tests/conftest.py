import functools

import pytest

from switchemt.stepper import RunConfig, simulate
from switchemt.tables import CASES


@functools.lru_cache(maxsize=None)
def _cached_run(case, method, h, t_end, record):
    return simulate(RunConfig(CASES[case](), method, h, t_end, record=record))


@pytest.fixture(scope="session")
def run():
    """Memoized builtin-circuit simulation shared across test modules."""

    def _run(case, method, h, t_end, record=None):
        return _cached_run(case, method, h, t_end, None if record is None else tuple(record))

    return _run


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
