"""Pass/fail bookkeeping for the acceptance suite."""

import sys
import time
from contextlib import contextmanager

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit_s: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, f"took {elapsed:.2f}s, limit {limit_s}s"
    except BaseException as exc:
        line = f"FAIL criterion {number}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        _emit(line)
        raise
    _emit(f"PASS criterion {number}: {title} ({elapsed:.2f}s)")


def _emit(line):
    RESULTS.append(line)
    print(line, file=sys.stderr)
