"""Every timeline the engine produces during the tests is scanned for
schedule violations before the test sees it. Acceptance checks record a
verdict line that is printed in the terminal summary."""

import pytest

from flowsim import engine
from flowsim.metrics import check_timeline
from flowsim.model import Timeline

SCANNED = {"count": 0, "failed": 0}
ACCEPTANCE = {}


class _CheckedTimeline(Timeline):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        SCANNED["count"] += 1
        try:
            check_timeline(self)
        except AssertionError:
            SCANNED["failed"] += 1
            raise


@pytest.fixture(autouse=True, scope="session")
def _scan_every_timeline():
    original = engine.Timeline
    engine.Timeline = _CheckedTimeline
    yield
    engine.Timeline = original


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records the outcome of acceptance check ``n``."""

    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    tr.write_line(f"timelines scanned for schedule violations: {SCANNED['count']} ({SCANNED['failed']} failed)")
    if not ACCEPTANCE:
        return
    if 8 in ACCEPTANCE:
        ok, detail = ACCEPTANCE[8]
        ACCEPTANCE[8] = (ok and SCANNED["failed"] == 0,
                         f"{detail}; {SCANNED['count']} timelines scanned, {SCANNED['failed']} with violations")
    tr.section("acceptance")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
