"""Collects the per-criterion verdicts of the acceptance suite and prints them at the end."""
import pytest

ACCEPTANCE: dict = {}


def record(name: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE[name] = line
    print(line)


@pytest.fixture
def verdict():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE, key=lambda n: int(n.split()[1].rstrip(":"))):
            terminalreporter.write_line(ACCEPTANCE[name])
