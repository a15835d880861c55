import time
from contextlib import contextmanager

import pytest

_RESULTS = pytest.StashKey[list]()


class Recorder:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, lines: list):
        self.lines = lines

    @contextmanager
    def criterion(self, number: int, title: str, time_limit_s: float | None = None):
        start = time.perf_counter()
        try:
            yield
            elapsed = time.perf_counter() - start
            if time_limit_s is not None:
                assert elapsed < time_limit_s, f"took {elapsed:.1f} s, limit {time_limit_s} s"
        except BaseException as exc:
            self._emit(number, title, "FAIL", time.perf_counter() - start, str(exc).splitlines()[0] if str(exc) else "")
            raise
        self._emit(number, title, "PASS", elapsed)

    def _emit(self, number, title, verdict, elapsed, detail=""):
        line = f"{verdict} criterion {number}: {title} ({elapsed:.2f} s)"
        if detail:
            line += f" -- {detail}"
        print(line)
        self.lines.append((number, line))


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(_RESULTS, [])
    return Recorder(lines)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
