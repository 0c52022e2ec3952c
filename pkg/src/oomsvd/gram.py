"""Distributed, batched Gram product ``B = X^T X`` with a reduced task schedule.

With orthogonal batching the local slab ``X_r`` (rows owned by rank r) is
cut into ``n_b`` column batches and tile ``B_ij = X_i^T X_j`` is computed
only for ``i <= j``; the task for an off-diagonal tile also yields
``B_ji = B_ij^T`` from the operands already on the device.  That is
``n_b (n_b + 1) / 2`` tasks instead of ``n_b**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import CsrMatrix, as_vector
from .partition import COLLINEAR, BatchPlan
from .store import BlockId, TieredStore
from .tasks import TaskQueue

REPLICATED = "replicated"
DISTRIBUTED = "distributed"


@dataclass
class GramTask:
    i: int
    j: int
    slot: int
    state: str = "pending"


def gram_tasks(n_b: int, q_s: int = 1) -> list[GramTask]:
    """Lower-triangle task list, column-major, slots assigned round-robin."""
    order = [(i, j) for j in range(n_b) for i in range(j + 1)]
    return [GramTask(i, j, idx % q_s) for idx, (i, j) in enumerate(order)]


def owner_ranges(n: int, workers: int) -> tuple[tuple[int, int], ...]:
    """Contiguous row slabs of B, ``ceil(n / N)`` rows per rank."""
    chunk = math.ceil(n / workers)
    return tuple((min(r * chunk, n), min((r + 1) * chunk, n)) for r in range(workers))


@dataclass
class GramResult:
    B: np.ndarray
    n: int
    mode: str
    row_range: tuple[int, int]
    owners: tuple[tuple[int, int], ...]
    tasks: list[GramTask] = field(default_factory=list)
    max_running: int = 0
    h2d_count: int = 0
    block_id: BlockId | None = None

    def release(self, store: TieredStore) -> None:
        """Evict the device-resident B, if any."""
        if self.block_id is not None and store.is_resident(self.block_id):
            store.evict(self.block_id)
            self.block_id = None


def _dense(block) -> np.ndarray:
    return block.to_dense() if isinstance(block, CsrMatrix) else block


def _batch_sources(x_local, ranges, orientation):
    if isinstance(x_local, (list, tuple)):
        if len(x_local) != len(ranges):
            raise ShapeError("one source per batch is required")
        return list(x_local)
    if orientation == COLLINEAR:
        if isinstance(x_local, CsrMatrix):
            return [x_local.row_block(a, b) for a, b in ranges]
        return [x_local[a:b] for a, b in ranges]
    if isinstance(x_local, CsrMatrix):
        return [x_local.col_block(a, b) for a, b in ranges]
    return [x_local[:, a:b] for a, b in ranges]


def _overlaps(lo, hi, owners):
    for rank, (a, b) in enumerate(owners):
        s, e = max(lo, a), min(hi, b)
        if s < e:
            yield rank, s, e


def dist_gram(
    x_local,
    batch_plan: BatchPlan,
    comm,
    store: TieredStore | None = None,
    *,
    n: int | None = None,
    mode: str = REPLICATED,
    b_on_device: bool = True,
    tag: str = "X",
    gen: int = 0,
) -> GramResult:
    """Compute ``X^T X`` summed over ranks.

    ``x_local`` is this rank's row slab (dense or CSR), or a list of
    per-batch host sources where ``None`` means "already resident or on the
    store's host tier under ``BlockId(tag, batch, 0, gen)``".  ``n`` is
    required in that last case.

    ``mode="replicated"`` leaves the full B on every rank (on the device
    when ``b_on_device``); ``mode="distributed"`` leaves each rank with its
    contiguous row slab of B on the host.
    """
    if mode not in (REPLICATED, DISTRIBUTED):
        raise ConfigError(f"unknown Gram mode {mode!r}")
    store = store if store is not None else TieredStore()
    rank, size = comm.rank, comm.size
    ranges = batch_plan.ranges(rank)
    orientation = batch_plan.orientation
    sources = _batch_sources(x_local, ranges, orientation)
    if n is None:
        if x_local is None or isinstance(x_local, (list, tuple)):
            raise ShapeError("n must be given when x_local is not a matrix")
        n = x_local.shape[1]
    if orientation != COLLINEAR and ranges[-1][1] != n:
        raise ShapeError(f"batches cover {ranges[-1][1]} columns, X has {n}")
    owners = owner_ranges(n, size)
    h2d_before = store.h2d_count

    def bid(b):
        return BlockId(tag, b, 0, gen)

    preresident = {b for b in range(len(ranges)) if store.is_resident(bid(b))}

    block_id = None
    if mode == REPLICATED:
        row_range = (0, n)
        if b_on_device:
            block_id = BlockId("B", 0, 0, gen)
            B = store.allocate(block_id, (n, n), lease=False)
        else:
            B = np.zeros((n, n))
    else:
        row_range = owners[rank]
        B = np.zeros((row_range[1] - row_range[0], n))

    def put(sub, rows, cols):
        """Store a reduced tile into this rank's copy of B."""
        if mode == REPLICATED and b_on_device:
            B[rows[0] : rows[1], cols[0] : cols[1]] = sub
        else:
            r0 = row_range[0]
            store.copy_to_host(sub, B[rows[0] - r0 : rows[1] - r0, cols[0] : cols[1]])

    def drop(b, current):
        if b in preresident or b == current:
            return
        if store.is_resident(bid(b)) and store.leases(bid(b)) == 0:
            store.evict(bid(b))

    if orientation == COLLINEAR:
        tasks = [GramTask(c, c, c % batch_plan.q_s) for c in range(len(ranges))]
        acc = np.zeros((n, n))

        def stage(task):
            task.state = "running"
            xb, copied = store.acquire(bid(task.i), sources[task.i])
            tile = store.allocate(BlockId("scratch", task.i, task.i, gen), (n, n))
            return xb, tile, copied

        def work(task, staged):
            xb, tile, copied = staged
            store.charge(copied)
            d = _dense(xb)
            tile[...] = d.T @ d

        def finish(task, staged, _):
            acc[...] += staged[1]
            tid = BlockId("scratch", task.i, task.i, gen)
            store.release(tid)
            store.evict(tid)
            store.release(bid(task.i))
            drop(task.i, None)
            task.state = "done"

        with TaskQueue(batch_plan.q_s) as queue:
            queue.run(tasks, stage, work, finish)
            max_running = queue.max_running
        if mode == REPLICATED:
            put(comm.all_reduce_sum(acc), (0, n), (0, n))
        else:
            for owner, a, b in _overlaps(0, n, owners):
                red = comm.reduce_sum(acc[a:b], owner)
                if owner == rank:
                    put(red, (a, b), (0, n))
    else:
        tasks = gram_tasks(len(ranges), batch_plan.q_s)
        current = [None]

        def stage(task):
            task.state = "running"
            if task.j != current[0]:
                previous, current[0] = current[0], task.j
                if previous is not None:
                    drop(previous, task.j)
            xj, copied = store.acquire(bid(task.j), sources[task.j])
            if task.i != task.j:
                xi, more = store.acquire(bid(task.i), sources[task.i])
                copied += more
            else:
                xi = xj
            (i0, i1), (j0, j1) = ranges[task.i], ranges[task.j]
            tile = store.allocate(BlockId("scratch", task.i, task.j, gen), (i1 - i0, j1 - j0))
            return xi, xj, tile, copied

        def work(task, staged):
            xi, xj, tile, copied = staged
            store.charge(copied)
            tile[...] = _dense(xi).T @ _dense(xj)

        def finish(task, staged, _):
            tile = staged[2]
            ri, rj = ranges[task.i], ranges[task.j]
            if mode == REPLICATED:
                tile[...] = comm.all_reduce_sum(tile)
                put(tile, ri, rj)
                if task.i != task.j:
                    put(tile.T, rj, ri)
            else:
                for owner, a, b in _overlaps(ri[0], ri[1], owners):
                    red = comm.reduce_sum(tile[a - ri[0] : b - ri[0]], owner)
                    if owner == rank:
                        put(red, (a, b), rj)
                if task.i != task.j:
                    tile_t = tile.T
                    for owner, a, b in _overlaps(rj[0], rj[1], owners):
                        red = comm.reduce_sum(tile_t[a - rj[0] : b - rj[0]], owner)
                        if owner == rank:
                            put(red, (a, b), ri)
            tid = BlockId("scratch", task.i, task.j, gen)
            store.release(tid)
            store.evict(tid)
            for b in {task.i, task.j}:
                store.release(bid(b))
                drop(b, current[0])
            task.state = "done"

        with TaskQueue(batch_plan.q_s) as queue:
            queue.run(tasks, stage, work, finish)
            max_running = queue.max_running
        for b in range(len(ranges)):
            drop(b, None)

    return GramResult(
        B, n, mode, row_range, owners, tasks, max_running, store.h2d_count - h2d_before, block_id
    )


def _rowwise_matvec(B, v, chunk=256) -> np.ndarray:
    """``B @ v`` where each entry depends only on its own row.

    BLAS gemv rounds differently depending on how many rows it is given, so
    slab-by-slab products would not be bitwise equal to the full product.
    """
    out = np.empty(B.shape[0])
    for r0 in range(0, B.shape[0], chunk):
        out[r0 : r0 + chunk] = (B[r0 : r0 + chunk] * v).sum(axis=1)
    return out


def gram_matvec(result: GramResult, v, comm=None) -> np.ndarray:
    """``B @ v`` for a replicated or row-distributed Gram (bitwise equal across layouts)."""
    v = as_vector(v)
    if v.shape[0] != result.n:
        raise ShapeError(f"vector of length {v.shape[0]} for a Gram of order {result.n}")
    if result.mode == REPLICATED:
        return _rowwise_matvec(result.B, v)
    if comm is None:
        raise ConfigError("a communicator is required for a distributed Gram")
    out = np.zeros(result.n)
    r0, r1 = result.row_range
    if r1 > r0:
        out[r0:r1] = _rowwise_matvec(result.B, v)
    return comm.all_reduce_sum(out)
