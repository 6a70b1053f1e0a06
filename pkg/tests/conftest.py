from __future__ import annotations

import pytest

import stochcont  # noqa: F401  (enables double precision in jax)

# criterion -> list of (part, ok, detail)
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def record():
    """Register one sub-check of an acceptance criterion for the terminal summary."""

    def _record(criterion: int, part: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        failed = [p[0] for p in parts if not p[1]]
        tail = f"  (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  [{len(parts)} checks]{tail}")
        for part, good, detail in parts:
            terminalreporter.write_line(f"      {'ok ' if good else 'BAD'} {part}: {detail}")
