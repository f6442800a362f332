"""Counting permits with high-water instrumentation.

The execute / debug / feedback stages are each gated by a permit pool so
live runs never exceed the configured concurrency; the recorded high-water
marks let tests assert that bound directly.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager


class Permit:
    def __init__(self, name: str, count: int):
        if count < 1:
            raise ValueError("permit count must be >= 1")
        self.name = name
        self.count = count
        self._sem = threading.BoundedSemaphore(count)
        self._lock = threading.Lock()
        self._active = 0
        self._high_water = 0

    @contextmanager
    def acquire(self):
        self._sem.acquire()
        with self._lock:
            self._active += 1
            self._high_water = max(self._high_water, self._active)
        try:
            yield
        finally:
            with self._lock:
                self._active -= 1
            self._sem.release()

    @property
    def active(self) -> int:
        with self._lock:
            return self._active

    @property
    def high_water(self) -> int:
        with self._lock:
            return self._high_water


class Permits:
    """The three permit pools used by a run."""

    def __init__(self, running: int = 3, debugging: int = 3, feedback: int = 1):
        self.running = Permit("running", running)
        self.debugging = Permit("debugging", debugging)
        self.feedback = Permit("feedback", feedback)
