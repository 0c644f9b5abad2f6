import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        _criteria[num] = (title, rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        title, outcome, detail = _criteria[num]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {num:2d} {verdict}  {title}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line)


@pytest.fixture
def report(request):
    """Attach a short measurement summary to the criterion line."""
    def note(text):
        request.node.criterion_detail = text
    return note
