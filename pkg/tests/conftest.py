from __future__ import annotations

from contextlib import contextmanager

import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


@contextmanager
def _criterion(name: str, detail: list):
    try:
        yield detail
    except BaseException as exc:
        msg = "; ".join(detail + [f"{type(exc).__name__}: {exc}".splitlines()[0]])
        _VERDICTS.append((name, False, msg))
        print(f"FAIL  {name}  {msg}")
        raise
    _VERDICTS.append((name, True, "; ".join(detail)))
    print(f"PASS  {name}  {'; '.join(detail)}")


@pytest.fixture
def criterion():
    """``with criterion(name) as notes:`` records one pass/fail verdict; append measurements to ``notes``."""
    return lambda name: _criterion(name, [])


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
