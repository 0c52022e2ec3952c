"""Partition orientation, batch geometry and out-of-memory classification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .errors import ConfigError, DegreeTwoError

log = logging.getLogger(__name__)

ELEMENT_BYTES = 8
INDEX_BYTES = 8

ROW = "row"
COLUMN = "column"
ORTHOGONAL = "orthogonal"
COLLINEAR = "collinear"


def even_split(length: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(length)`` into ``parts`` contiguous ranges; remainder goes to low ranks."""
    if parts < 1:
        raise ConfigError("number of parts must be at least 1")
    if parts > length:
        raise ConfigError(f"cannot split an axis of length {length} into {parts} parts")
    base, extra = divmod(length, parts)
    out, start = [], 0
    for p in range(parts):
        stop = start + base + (1 if p < extra else 0)
        out.append((start, stop))
        start = stop
    return out


@dataclass(frozen=True)
class PartitionPlan:
    m: int
    n: int
    workers: int
    axis: str
    slabs: tuple[tuple[int, int], ...]
    k: int | None = None

    @property
    def axis_length(self) -> int:
        return self.m if self.axis == ROW else self.n

    @property
    def other_length(self) -> int:
        return self.n if self.axis == ROW else self.m

    def slab(self, rank: int) -> tuple[int, int]:
        return self.slabs[rank]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "workers": self.workers,
            "axis": self.axis,
            "slabs": [list(s) for s in self.slabs],
            "k": self.k,
        }


def choose_partition(m: int, n: int, workers: int, k: int | None = None) -> PartitionPlan:
    """Column partition when ``n > m``, row partition otherwise (ties go to rows)."""
    if m < 1 or n < 1 or workers < 1:
        raise ConfigError(f"invalid partition request m={m} n={n} workers={workers}")
    axis = COLUMN if n > m else ROW
    length = n if axis == COLUMN else m
    if workers > length:
        raise ConfigError(f"{workers} workers exceed the partitioned axis length {length}")
    return PartitionPlan(m, n, workers, axis, tuple(even_split(length, workers)), k)


@dataclass(frozen=True)
class BatchPlan:
    """Batch ranges for every rank.

    Orthogonal ranges index the non-partitioned axis and are shared by all
    ranks.  Collinear ranges are local offsets into each rank's slab.
    """

    n_b: int
    b_s: int
    orientation: str
    q_s: int
    rank_ranges: tuple[tuple[tuple[int, int], ...], ...]
    q_s_requested: int = 0
    q_s_clamped: bool = False

    def ranges(self, rank: int = 0) -> tuple[tuple[int, int], ...]:
        return self.rank_ranges[rank]

    def to_dict(self) -> dict:
        return {
            "n_b": self.n_b,
            "b_s": self.b_s,
            "orientation": self.orientation,
            "q_s": self.q_s,
            "q_s_requested": self.q_s_requested,
            "q_s_clamped": self.q_s_clamped,
        }


def plan_batches(
    plan: PartitionPlan, orientation: str = ORTHOGONAL, n_b: int = 1, q_s: int = 1
) -> BatchPlan:
    if orientation not in (ORTHOGONAL, COLLINEAR):
        raise ConfigError(f"unknown batching orientation {orientation!r}")
    if n_b < 1:
        raise ConfigError("n_b must be at least 1")
    if q_s < 1:
        raise ConfigError("q_s must be at least 1")
    if orientation == ORTHOGONAL:
        shared = tuple(even_split(plan.other_length, n_b))
        rank_ranges = tuple(shared for _ in plan.slabs)
    else:
        shortest = min(stop - start for start, stop in plan.slabs)
        if n_b > shortest:
            raise ConfigError(f"n_b={n_b} exceeds the shortest slab ({shortest} rows)")
        rank_ranges = tuple(tuple(even_split(stop - start, n_b)) for start, stop in plan.slabs)
    b_s = max(stop - start for ranges in rank_ranges for start, stop in ranges)
    clamped = q_s > n_b
    if clamped:
        log.warning("queue size %d clamped to the batch count %d", q_s, n_b)
    return BatchPlan(n_b, b_s, orientation, min(q_s, n_b), rank_ranges, q_s, clamped)


@dataclass(frozen=True)
class MemoryEstimate:
    m: int
    n: int
    k: int
    sparse: bool
    density: float
    s_a: int  # dense footprint of A
    s_svd: int
    s_stored: int  # footprint of A in its storage format


def _csr_bytes(rows: int, cols: int, density: float) -> int:
    nnz = round(density * rows * cols)
    return nnz * (ELEMENT_BYTES + INDEX_BYTES) + (rows + 1) * INDEX_BYTES


def estimate_memory(
    m: int, n: int, k: int, sparse: bool = False, density: float = 1.0
) -> MemoryEstimate:
    """Working-set estimate: 4x the dense size for dense input, 2x for sparse input."""
    if k > min(m, n):
        raise ConfigError(f"k={k} exceeds min(m, n)={min(m, n)}")
    s_a = m * n * ELEMENT_BYTES
    if sparse:
        return MemoryEstimate(m, n, k, True, density, s_a, 2 * s_a, _csr_bytes(m, n, density))
    return MemoryEstimate(m, n, k, False, 1.0, s_a, 4 * s_a, s_a)


@dataclass(frozen=True)
class OomAssessment:
    s_a: int
    s_svd: int
    degree: int
    placement: dict = field(default_factory=dict)
    per_worker_svd: int = 0
    largest_block: int = 0
    device_budget: int | None = None

    def to_dict(self) -> dict:
        return {
            "s_a": self.s_a,
            "s_svd": self.s_svd,
            "degree": self.degree,
            "placement": dict(self.placement),
            "per_worker_svd": self.per_worker_svd,
            "largest_block": self.largest_block,
            "device_budget": self.device_budget,
        }


def _swap_cofactors(placement: dict) -> dict:
    out = dict(placement)
    out["U"], out["V"] = placement["V"], placement["U"]
    return out


def classify_oom(
    estimate: MemoryEstimate,
    device_budget: int,
    *,
    workers: int = 1,
    n_b: int = 1,
    path: str = "residual-free",
) -> OomAssessment:
    """Classify the out-of-memory degree for one worker's device budget.

    Degree 0 when the worker's share of the working set fits.  Degree 1 when
    it does not but the largest block any single task needs does; the heavy
    replicated co-factor then lives on the host (V for a row partition, U for
    a column partition).  Degree 2 raises :class:`DegreeTwoError`.
    """
    if device_budget <= 0:
        raise ConfigError("device budget must be positive")
    m, n, k = estimate.m, estimate.n, estimate.k
    axis = COLUMN if n > m else ROW
    # canonical frame: rows are the partitioned axis
    rows, cols = (m, n) if axis == ROW else (n, m)
    local_rows = math.ceil(rows / workers)
    b = math.ceil(cols / n_b)
    per_worker = math.ceil(estimate.s_svd / workers)
    kk = max(k, 1)

    u_local = local_rows * kk * ELEMENT_BYTES
    sigma = kk * ELEMENT_BYTES
    if estimate.sparse:
        a_local = _csr_bytes(local_rows, cols, estimate.density)
        a_batch = _csr_bytes(local_rows, b, estimate.density)
    else:
        a_local = local_rows * cols * ELEMENT_BYTES
        a_batch = local_rows * b * ELEMENT_BYTES
    blocks = [u_local, a_batch, b * kk * ELEMENT_BYTES]
    if path == "dense-gram":
        blocks += [b * b * ELEMENT_BYTES, local_rows * b * ELEMENT_BYTES]
    largest = max(blocks)

    names = ["A", "U", "Sigma", "V"] + (["X", "B"] if path == "dense-gram" else [])
    if per_worker <= device_budget:
        placement = {name: "device" for name in names}
        degree = 0
    elif largest <= device_budget:
        degree = 1
        placement = {"U": "device", "Sigma": "device", "V": "host"}
        placement["A"] = "device" if a_local + u_local + sigma <= device_budget // 2 else "host"
        if path == "dense-gram":
            placement["X"] = "host"
            placement["B"] = "host"
        if axis == COLUMN:
            placement = _swap_cofactors(placement)
    else:
        raise DegreeTwoError(
            f"largest required block ({largest} B) exceeds the device budget "
            f"({device_budget} B): degree-2 scenarios are unsupported"
        )
    return OomAssessment(
        estimate.s_a, estimate.s_svd, degree, placement, per_worker, largest, device_budget
    )
