import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one summary line per acceptance criterion, printed after the run
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


@pytest.fixture
def measured(request):
    """Append short measurement notes to the criterion's summary line."""
    notes = []
    request.node._acceptance_notes = notes

    def note(text):
        notes.append(text)
        print(f"  {text}")

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    notes = getattr(item, "_acceptance_notes", [])
    status = "PASS" if rep.passed else "FAIL"
    line = f"{status} criterion {n:2d}: {title}"
    if notes:
        line += " [" + "; ".join(notes) + "]"
    _ACCEPTANCE[n] = line


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
