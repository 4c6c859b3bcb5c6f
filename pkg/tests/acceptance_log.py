"""Pass/fail lines of the acceptance criteria, printed in the terminal summary."""

import time
from contextlib import contextmanager

LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield
        status = "PASS"
    finally:
        line = f"criterion {number:2d} {status}  {title}  ({time.perf_counter() - t0:.1f} s)"
        LINES.append(line)
        print(line)
