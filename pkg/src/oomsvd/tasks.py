"""Bounded task queue standing in for a pool of device streams.

Tasks pass through three steps.  ``stage`` runs on the rank's driver thread
in submission order (block leases and device accounting happen here, so
memory peaks do not depend on thread timing).  ``work`` runs on one of
``q_s`` worker threads and pays transfer costs and does the arithmetic.
``finish`` runs on the driver thread strictly in submission order, which is
where collectives are issued so every rank sees the same sequence.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


class TaskQueue:
    def __init__(self, q_s: int = 1):
        if q_s < 1:
            raise ConfigError("queue size must be at least 1")
        self.q_s = q_s
        self._pool = ThreadPoolExecutor(q_s, thread_name_prefix="stream") if q_s > 1 else None
        self._lock = threading.Lock()
        self._running = 0
        self.max_running = 0
        self.max_in_flight = 0
        self.executed = 0

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _work(self, work, task, staged):
        with self._lock:
            self._running += 1
            self.max_running = max(self.max_running, self._running)
        try:
            return work(task, staged)
        finally:
            with self._lock:
                self._running -= 1

    def run(self, tasks, stage, work, finish) -> None:
        """Process ``tasks`` with at most ``q_s`` of them in flight."""
        if self._pool is None:
            for task in tasks:
                staged = stage(task)
                self.max_in_flight = max(self.max_in_flight, 1)
                result = self._work(work, task, staged)
                finish(task, staged, result)
                self.executed += 1
            return
        in_flight: deque = deque()
        try:
            for task in tasks:
                if len(in_flight) == self.q_s:
                    self._retire(in_flight, finish)
                staged = stage(task)
                in_flight.append((task, staged, self._pool.submit(self._work, work, task, staged)))
                self.max_in_flight = max(self.max_in_flight, len(in_flight))
            while in_flight:
                self._retire(in_flight, finish)
        finally:
            for _, _, fut in in_flight:
                fut.cancel()
                if not fut.cancelled():
                    fut.exception()

    def _retire(self, in_flight, finish) -> None:
        task, staged, fut = in_flight.popleft()
        finish(task, staged, fut.result())
        self.executed += 1
