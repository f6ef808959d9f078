import pytest

_VERDICTS: dict[int, list] = {}


@pytest.fixture
def criterion():
    """``check = criterion(k, title)`` opens criterion k; ``check(ok, detail)`` closes it."""
    def open_(k: int, title: str):
        _VERDICTS[k] = [title, None, "did not finish"]

        def close(ok: bool, detail: str = ""):
            _VERDICTS[k][1:] = [bool(ok), detail]
            print(f"{'PASS' if ok else 'FAIL'} criterion {k}: {title} | {detail}")
            return ok
        return close
    return open_


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        title, ok, detail = _VERDICTS[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {title} | {detail}")
