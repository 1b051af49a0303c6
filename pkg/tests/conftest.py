import pytest

_RESULTS: list[str] = []


class Acceptance:
    """Records one PASS/FAIL line per acceptance criterion."""

    def check(self, number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _RESULTS.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def acceptance() -> Acceptance:
    return Acceptance()


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
