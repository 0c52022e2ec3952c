"""Deterministic in-process collectives over N ranks.

Ranks are threads.  Every collective is a rendezvous keyed by the call's
sequence number on each rank, so ranks must issue collectives in the same
order.  Sums are always accumulated in rank order 0..N-1, which makes the
result bit-for-bit reproducible.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import CollectiveError, CollectiveTimeout, ConfigError

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class CommStats:
    all_reduce_calls: int = 0
    reduce_calls: int = 0
    barrier_calls: int = 0
    bytes_moved: int = 0


class _Rendezvous:
    __slots__ = ("kind", "root", "buffers", "result", "error", "departed")

    def __init__(self, kind, root, size):
        self.kind = kind
        self.root = root
        self.buffers = [None] * size
        self.result = None
        self.error = None
        self.departed = 0


class CommGroup:
    """A group of ``size`` ranks sharing collective state and counters."""

    def __init__(self, size: int, timeout: float = DEFAULT_TIMEOUT):
        if size < 1:
            raise ConfigError("communicator size must be at least 1")
        self.size = size
        self.timeout = timeout
        self._cond = threading.Condition()
        self._pending: dict[int, _Rendezvous] = {}
        self._seq = [0] * size
        self._aborted: str | None = None
        self._all_reduce_calls = 0
        self._reduce_calls = 0
        self._barrier_calls = 0
        self._bytes_moved = 0

    def handle(self, rank: int) -> "Comm":
        if not 0 <= rank < self.size:
            raise ConfigError(f"rank {rank} outside [0, {self.size})")
        return Comm(self, rank)

    def stats(self) -> CommStats:
        with self._cond:
            return CommStats(
                self._all_reduce_calls, self._reduce_calls, self._barrier_calls, self._bytes_moved
            )

    def abort(self, reason: str) -> None:
        """Wake every waiting rank with a :class:`CollectiveError`."""
        with self._cond:
            if self._aborted is None:
                self._aborted = reason
            self._cond.notify_all()

    def run(self, fn, *args, **kwargs) -> list:
        """Run ``fn(comm, *args, **kwargs)`` on every rank; return per-rank results.

        The first exception raised by any rank aborts the group and is
        re-raised here once all rank threads have exited.
        """
        results = [None] * self.size
        errors: list[tuple[int, BaseException]] = []

        def target(rank):
            try:
                results[rank] = fn(self.handle(rank), *args, **kwargs)
            except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
                with self._cond:
                    errors.append((rank, exc))
                self.abort(f"rank {rank} failed: {exc!r}")

        if self.size == 1:
            target(0)
        else:
            threads = [
                threading.Thread(target=target, args=(r,), name=f"rank-{r}")
                for r in range(self.size)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        if errors:
            # prefer the root cause over the peers' abort notices
            primary = [e for _, e in errors if not isinstance(e, CollectiveError)]
            raise (primary or [errors[0][1]])[0]
        return results

    def _collective(self, rank, kind, buffer, root=None):
        buffer = None if buffer is None else np.asarray(buffer, dtype=np.float64)
        with self._cond:
            if self._aborted:
                raise CollectiveError(f"communicator aborted: {self._aborted}")
            seq = self._seq[rank]
            self._seq[rank] += 1
            rv = self._pending.get(seq)
            if rv is None:
                rv = self._pending[seq] = _Rendezvous(kind, root, self.size)
            if rv.kind != kind or rv.root != root:
                rv.error = CollectiveError(
                    f"collective #{seq} mismatch: {rv.kind}(root={rv.root}) vs {kind}(root={root})"
                )
            rv.buffers[rank] = buffer if buffer is not None else np.zeros(0)
            if all(b is not None for b in rv.buffers) and rv.result is None and rv.error is None:
                self._complete(rv)
            else:
                self._cond.notify_all()
                ok = self._cond.wait_for(
                    lambda: rv.result is not None or rv.error is not None or self._aborted,
                    timeout=self.timeout,
                )
                if not ok:
                    missing = [r for r, b in enumerate(rv.buffers) if b is None]
                    rv.error = CollectiveTimeout(
                        f"{kind} #{seq} timed out after {self.timeout}s waiting for ranks {missing}"
                    )
                    self._cond.notify_all()
            rv.departed += 1
            if rv.departed == self.size:
                self._pending.pop(seq, None)
            if rv.error is not None:
                raise rv.error
            if rv.result is None:
                raise CollectiveError(f"communicator aborted: {self._aborted}")
            if kind == "reduce" and rank != root:
                return buffer
            return rv.result.copy() if kind != "barrier" else None

    def _complete(self, rv: _Rendezvous) -> None:
        shapes = {b.shape for b in rv.buffers}
        if len(shapes) != 1:
            rv.error = CollectiveError(f"{rv.kind}: buffer shapes differ across ranks {shapes}")
            self._cond.notify_all()
            return
        if rv.kind == "barrier":
            self._barrier_calls += 1
            rv.result = np.zeros(0)
        else:
            total = rv.buffers[0].copy()
            for b in rv.buffers[1:]:
                total += b
            rv.result = total
            # one link traversal per rank payload
            self._bytes_moved += self.size * int(total.nbytes)
            if rv.kind == "all_reduce":
                self._all_reduce_calls += 1
            else:
                self._reduce_calls += 1
        self._cond.notify_all()


class Comm:
    """Rank handle.  Use from one thread at a time."""

    def __init__(self, group: CommGroup, rank: int):
        self.group = group
        self.rank = rank

    @property
    def size(self) -> int:
        return self.group.size

    def all_reduce_sum(self, buffer) -> np.ndarray:
        """Every rank receives the elementwise sum, accumulated in rank order."""
        return self.group._collective(self.rank, "all_reduce", buffer)

    def reduce_sum(self, buffer, root: int) -> np.ndarray:
        """``root`` receives the sum; other ranks get their own buffer back."""
        if not 0 <= root < self.size:
            raise ConfigError(f"root {root} outside [0, {self.size})")
        return self.group._collective(self.rank, "reduce", buffer, root)

    def barrier(self) -> None:
        self.group._collective(self.rank, "barrier", None)


def all_reduce_sum(group: CommGroup, rank: int, buffer) -> np.ndarray:
    return group.handle(rank).all_reduce_sum(buffer)


def reduce_sum(group: CommGroup, rank: int, buffer, root: int) -> np.ndarray:
    return group.handle(rank).reduce_sum(buffer, root)


def barrier(group: CommGroup, rank: int) -> None:
    group.handle(rank).barrier()
