"""Process-wide counters for classifier queries and synthesized rows.

Anything that calls a classifier or fabricates an input row (hybrid instances,
masked instances) reports here, so tests can assert that a code path stayed
on the unmodified data without touching the model.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass

_lock = threading.Lock()
_totals = {"queries": 0, "query_rows": 0, "synthesized_rows": 0}


def record_query(n_rows):
    with _lock:
        _totals["queries"] += 1
        _totals["query_rows"] += int(n_rows)


def record_synthesized(n_rows):
    with _lock:
        _totals["synthesized_rows"] += int(n_rows)


def snapshot():
    with _lock:
        return dict(_totals)


@dataclass
class Tally:
    queries: int = 0
    query_rows: int = 0
    synthesized_rows: int = 0


@contextmanager
def watch():
    """Yield a :class:`Tally` filled with the counter deltas on exit."""
    tally = Tally()
    before = snapshot()
    try:
        yield tally
    finally:
        after = snapshot()
        tally.queries = after["queries"] - before["queries"]
        tally.query_rows = after["query_rows"] - before["query_rows"]
        tally.synthesized_rows = after["synthesized_rows"] - before["synthesized_rows"]
