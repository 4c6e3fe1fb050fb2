import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# acceptance outcomes, keyed by criterion: [title, failed?, notes]
_CRITERIA: dict[str, list] = {}


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else mark.args


@pytest.fixture
def note(request):
    """Attach a line of detail to the criterion the current test belongs to."""
    key = _criterion(request.node)

    def add(text: str) -> None:
        if key is not None:
            _CRITERIA.setdefault(key[0], [key[1], False, []])[2].append(text)
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    key = _criterion(item)
    if key is None:
        return
    entry = _CRITERIA.setdefault(key[0], [key[1], False, []])
    if report.failed or (report.when == "call" and report.skipped):
        entry[1] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.lstrip("C"))):
        title, failed, notes = _CRITERIA[key]
        terminalreporter.write_line(f"{key:>4} {'FAIL' if failed else 'PASS'}  {title}")
        for text in notes:
            terminalreporter.write_line(f"           {text}")
