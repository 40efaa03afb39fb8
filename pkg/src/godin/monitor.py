"""Opt-in recording of value ranges for named intermediate quantities.

    with watch() as rec:
        run_evaluation(...)
    rec.ranges["g"]  # (min, max, count)
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator

import numpy as np

_recorder: ContextVar["RangeRecorder | None"] = ContextVar("range_recorder", default=None)


class RangeRecorder:
    def __init__(self) -> None:
        self.ranges: dict[str, tuple[float, float, int]] = {}

    def update(self, name: str, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return
        lo, hi = float(values.min()), float(values.max())
        if name in self.ranges:
            old_lo, old_hi, n = self.ranges[name]
            self.ranges[name] = (min(lo, old_lo), max(hi, old_hi), n + values.size)
        else:
            self.ranges[name] = (lo, hi, values.size)


def emit(name: str, values) -> None:
    rec = _recorder.get()
    if rec is not None:
        rec.update(name, values)


@contextmanager
def watch() -> Iterator[RangeRecorder]:
    rec = RangeRecorder()
    token = _recorder.set(rec)
    try:
        yield rec
    finally:
        _recorder.reset(token)
