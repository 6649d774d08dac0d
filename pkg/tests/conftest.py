import pytest

# criterion number -> list of (part, passed, detail); filled by test_acceptance
_CRITERIA: dict[int, list] = {}


@pytest.fixture
def record():
    def rec(number: int, part: str, passed, detail: str = ""):
        _CRITERIA.setdefault(number, []).append((part, passed, detail))
        status = "BLOCKED" if passed is None else ("PASS" if passed else "FAIL")
        print(f"criterion {number} [{part}]: {status} {detail}")
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        if any(p is None for _, p, _ in parts):
            status = "BLOCKED"
        else:
            status = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}: {d}" if d else name for name, _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {status} ({detail})")
