"""Two-tier block storage with a hard device-byte budget.

The device tier is an accounting layer over in-process arrays: every block
resident there counts against ``device_budget`` and every host/device copy
is counted.  Eviction is explicit; the caller knows block lifetimes.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CapacityError, DegreeTwoError, LeaseError, StoreError
from .linalg import CsrMatrix

TAGS = ("A", "U", "V", "B", "X", "scratch")


class BlockId(NamedTuple):
    tag: str
    i: int = 0
    j: int = 0
    gen: int = 0


def _nbytes(block) -> int:
    return int(block.nbytes)


def _copy(block):
    if isinstance(block, CsrMatrix):
        return block.copy()
    return np.array(block, dtype=np.float64, copy=True)


class MemoryHostTier:
    """Host tier backed by an in-memory dict."""

    def __init__(self):
        self._blocks: dict[BlockId, object] = {}

    def put(self, bid: BlockId, block) -> None:
        self._blocks[bid] = _copy(block)

    def get(self, bid: BlockId):
        try:
            return self._blocks[bid]
        except KeyError:
            raise StoreError(f"{bid} not present on the host tier") from None

    def __contains__(self, bid) -> bool:
        return bid in self._blocks

    def discard(self, bid: BlockId) -> None:
        self._blocks.pop(bid, None)


class FileHostTier:
    """Host tier with one raw little-endian float64 file per array tag.

    Dense blocks only; CSR blocks fall back to memory.
    """

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        os.makedirs(self.directory, exist_ok=True)
        self._layout: dict[BlockId, tuple[int, tuple[int, ...]]] = {}
        self._ends: dict[str, int] = {}
        self._fallback = MemoryHostTier()

    def _path(self, tag: str) -> str:
        return os.path.join(self.directory, f"{tag}.f64")

    def put(self, bid: BlockId, block) -> None:
        if isinstance(block, CsrMatrix):
            self._fallback.put(bid, block)
            return
        arr = np.ascontiguousarray(block, dtype="<f8")
        slot = self._layout.get(bid)
        if slot is None or int(np.prod(slot[1])) != arr.size:
            offset = self._ends.get(bid.tag, 0)
            self._ends[bid.tag] = offset + arr.nbytes
        else:
            offset = slot[0]
        self._layout[bid] = (offset, arr.shape)
        path = self._path(bid.tag)
        mode = "r+b" if os.path.exists(path) else "w+b"
        with open(path, mode) as fh:
            fh.seek(offset)
            fh.write(arr.tobytes())

    def get(self, bid: BlockId):
        if bid in self._fallback:
            return self._fallback.get(bid)
        try:
            offset, shape = self._layout[bid]
        except KeyError:
            raise StoreError(f"{bid} not present on the host tier") from None
        count = int(np.prod(shape))
        with open(self._path(bid.tag), "rb") as fh:
            fh.seek(offset)
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        return data.astype(np.float64).reshape(shape)

    def __contains__(self, bid) -> bool:
        return bid in self._layout or bid in self._fallback

    def discard(self, bid: BlockId) -> None:
        self._layout.pop(bid, None)
        self._fallback.discard(bid)


@dataclass(frozen=True)
class StoreStats:
    device_budget: int | None
    device_used: int
    peak_device_used: int
    h2d_bytes: int
    d2h_bytes: int
    h2d_count: int
    d2h_count: int
    resident_blocks: int


class _Entry:
    __slots__ = ("data", "nbytes", "leases", "host_ref")

    def __init__(self, data, nbytes, host_ref):
        self.data = data
        self.nbytes = nbytes
        self.leases = 0
        self.host_ref = host_ref


class TieredStore:
    """Host/device block store for one rank.

    ``device_budget=None`` means unlimited.  ``transfer_cost_ns_per_byte``
    charges a synthetic wall-time cost to whichever thread pays a transfer;
    concurrent transfers overlap.
    """

    def __init__(self, device_budget=None, *, host=None, transfer_cost_ns_per_byte=0.0):
        self.device_budget = device_budget
        self.host = host if host is not None else MemoryHostTier()
        self.transfer_cost_ns_per_byte = float(transfer_cost_ns_per_byte)
        self._lock = threading.RLock()
        self._resident: dict[BlockId, _Entry] = {}
        self.device_used = 0
        self.peak_device_used = 0
        self.h2d_bytes = self.d2h_bytes = 0
        self.h2d_count = self.d2h_count = 0

    # -- accounting -------------------------------------------------------
    def _reserve(self, bid, nbytes):
        if self.device_budget is not None:
            if nbytes > self.device_budget:
                raise DegreeTwoError(
                    f"block {bid} ({nbytes} B) exceeds the device budget ({self.device_budget} B)"
                )
            if self.device_used + nbytes > self.device_budget:
                raise CapacityError(
                    f"cannot place {bid} ({nbytes} B): {self.device_used} of "
                    f"{self.device_budget} B in use and eviction is caller-driven"
                )
        self.device_used += nbytes
        self.peak_device_used = max(self.peak_device_used, self.device_used)

    def charge(self, nbytes: int) -> None:
        """Sleep for the synthetic cost of moving ``nbytes``."""
        if nbytes and self.transfer_cost_ns_per_byte > 0:
            time.sleep(nbytes * self.transfer_cost_ns_per_byte * 1e-9)

    # -- block operations -------------------------------------------------
    def acquire(self, bid: BlockId, source=None, *, lease: bool = True):
        """Make ``bid`` resident without paying the transfer cost.

        Returns ``(block, copied_bytes)``; ``copied_bytes`` is 0 when the
        block was already resident.  ``source`` is the host array slice to
        copy from (and write back into); without it the host tier is read.
        """
        with self._lock:
            entry = self._resident.get(bid)
            if entry is None:
                host = source if source is not None else self.host.get(bid)
                nbytes = _nbytes(host)
                self._reserve(bid, nbytes)
                entry = _Entry(_copy(host), nbytes, source)
                self._resident[bid] = entry
                self.h2d_bytes += nbytes
                self.h2d_count += 1
                copied = nbytes
            else:
                copied = 0
            if lease:
                entry.leases += 1
            return entry.data, copied

    def fetch(self, bid: BlockId, source=None, *, lease: bool = True):
        """Host-to-device copy of ``bid``; already-resident blocks are reused."""
        block, copied = self.acquire(bid, source, lease=lease)
        self.charge(copied)
        return block

    def allocate(self, bid: BlockId, shape, *, lease: bool = True) -> np.ndarray:
        """Create a zeroed device-only block (no host copy, no transfer)."""
        with self._lock:
            if bid in self._resident:
                raise StoreError(f"{bid} is already resident")
            data = np.zeros(shape)
            self._reserve(bid, data.nbytes)
            entry = _Entry(data, data.nbytes, None)
            if lease:
                entry.leases = 1
            self._resident[bid] = entry
            return data

    def release(self, bid: BlockId) -> int:
        """Drop one lease; returns the remaining lease count."""
        with self._lock:
            entry = self._entry(bid)
            if entry.leases <= 0:
                raise LeaseError(f"{bid} has no active lease")
            entry.leases -= 1
            return entry.leases

    def writeback(self, bid: BlockId, out=None, *, charge: bool = True) -> None:
        """Device-to-host copy of ``bid`` into ``out``, its source, or the host tier."""
        with self._lock:
            entry = self._entry(bid)
            dest = out if out is not None else entry.host_ref
            if dest is not None and not isinstance(entry.data, CsrMatrix):
                dest[...] = entry.data
            else:
                self.host.put(bid, entry.data)
            self.d2h_bytes += entry.nbytes
            self.d2h_count += 1
            nbytes = entry.nbytes
        if charge:
            self.charge(nbytes)

    def copy_to_host(self, array, out, *, charge: bool = True) -> None:
        """Device-to-host copy of an untracked device result into ``out``."""
        out[...] = array
        nbytes = int(np.asarray(array).nbytes)
        with self._lock:
            self.d2h_bytes += nbytes
            self.d2h_count += 1
        if charge:
            self.charge(nbytes)

    def evict(self, bid: BlockId) -> None:
        with self._lock:
            entry = self._entry(bid)
            if entry.leases:
                raise LeaseError(f"{bid} is leased ({entry.leases}) and cannot be evicted")
            del self._resident[bid]
            self.device_used -= entry.nbytes

    def is_resident(self, bid: BlockId) -> bool:
        with self._lock:
            return bid in self._resident

    def leases(self, bid: BlockId) -> int:
        with self._lock:
            entry = self._resident.get(bid)
            return entry.leases if entry else 0

    def get(self, bid: BlockId):
        """Resident device block (no copy, no lease)."""
        with self._lock:
            return self._entry(bid).data

    def evict_all(self, tag: str | None = None) -> None:
        with self._lock:
            for bid in [b for b in self._resident if tag is None or b.tag == tag]:
                self.evict(bid)

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                self.device_budget,
                self.device_used,
                self.peak_device_used,
                self.h2d_bytes,
                self.d2h_bytes,
                self.h2d_count,
                self.d2h_count,
                len(self._resident),
            )

    def _entry(self, bid) -> _Entry:
        try:
            return self._resident[bid]
        except KeyError:
            raise StoreError(f"{bid} is not resident on the device") from None


def fetch(store: TieredStore, bid: BlockId, source=None):
    return store.fetch(bid, source)


def writeback(store: TieredStore, bid: BlockId) -> None:
    store.writeback(bid)


def evict(store: TieredStore, bid: BlockId) -> None:
    store.evict(bid)


def stats(store: TieredStore) -> StoreStats:
    return store.stats()
