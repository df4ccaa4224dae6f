"""Per-phase query timing: distance computation, edge filtering, heap
maintenance, and everything else."""
from __future__ import annotations

import threading
import time
from contextlib import contextmanager
from typing import Dict, Optional

PHASES = ("distance_compute", "edge_filtering", "heap_maintenance", "other")

_state = threading.local()


class PhaseTimer:
    def __init__(self):
        self.totals: Dict[str, float] = {p: 0.0 for p in PHASES}

    def add(self, phase: str, seconds: float) -> None:
        self.totals[phase] += seconds


def active() -> Optional[PhaseTimer]:
    return getattr(_state, "timer", None)


@contextmanager
def use(timer: PhaseTimer):
    prev = getattr(_state, "timer", None)
    _state.timer = timer
    try:
        yield timer
    finally:
        _state.timer = prev


def now() -> float:
    return time.perf_counter()
