"""Truncated SVD by power iteration with deflation.

Two per-rank drivers share one setup.  Both work in a canonical frame in
which the local slab is a block of *rows*; a column-partitioned problem is
handed over transposed by :func:`oomsvd.solver.truncated_svd`.

* :func:`svd_truncated_dense` forms the deflated residual batch by batch,
  builds its Gram with :func:`~oomsvd.gram.dist_gram` once per component and
  iterates on it.
* :func:`svd_truncated_sparse` never forms the residual or the Gram.  Each
  power step applies the deflated Gram through the four-term expansion

      v1 = X^T X v0 - V S U^T X v0 - X^T U S V^T v0 + V S^2 V^T v0

  evaluated right to left with matrix-vector products only
  (:func:`dist_compute_v`), which needs ``U^T U = I``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, NumericError, ShapeError
from .gram import DISTRIBUTED, REPLICATED, dist_gram, gram_matvec
from .linalg import CsrMatrix, matvec, matvec_transposed, norm2, shape_of
from .partition import COLLINEAR, BatchPlan, even_split, ORTHOGONAL
from .store import BlockId, TieredStore
from .tasks import TaskQueue

log = logging.getLogger(__name__)

DENSE_GRAM = "dense-gram"
RESIDUAL_FREE = "residual-free"
AUTO = "auto"
PATHS = (DENSE_GRAM, RESIDUAL_FREE, AUTO)

# relative floor below which a deflated component counts as zero
RANK_TOL = 1e-12


def residual_free_floor(n: int) -> float:
    """Relative noise floor of the four-term update.

    The expansion cancels terms of size sigma_1**2, so residual singular
    values below about sqrt(n * machine eps) * sigma_1 are indistinguishable
    from rounding noise.
    """
    return max(RANK_TOL, float(np.sqrt(16 * n * np.finfo(np.float64).eps)))


@dataclass
class SvdConfig:
    k: int = -1
    eps: float = 1e-10
    max_iter: int = 10_000
    seed: int = 0
    path: str = AUTO
    fixed_iters: int | None = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.path not in PATHS:
            raise ConfigError(f"unknown path {self.path!r}")
        if self.fixed_iters is not None and self.fixed_iters < 1:
            raise ConfigError("fixed_iters must be at least 1")
        if self.k < -1:
            raise ConfigError(f"invalid rank k={self.k}")

    def resolve_k(self, m: int, n: int) -> int:
        k = min(m, n) if self.k == -1 else self.k
        if k < 0 or k > min(m, n):
            raise ConfigError(f"k={self.k} must be -1 or lie in [0, min(m, n)={min(m, n)}]")
        return k


@dataclass
class Svd1dInfo:
    iterations: int
    converged: bool
    dot: float
    eigenvalue: float = 0.0  # ||B v0|| at the last step


@dataclass
class IterationReport:
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    final_dots: list = field(default_factory=list)
    wall_time_s: float = 0.0
    truncated: bool = False
    notice: str | None = None

    def add(self, info: Svd1dInfo) -> None:
        self.iterations.append(int(info.iterations))
        self.converged.append(bool(info.converged))
        self.final_dots.append(float(info.dot))

    def to_dict(self) -> dict:
        return {
            "iterations": list(self.iterations),
            "converged": list(self.converged),
            "final_dots": list(self.final_dots),
            "wall_time_s": self.wall_time_s,
            "truncated": self.truncated,
            "notice": self.notice,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationReport":
        return cls(
            list(d["iterations"]),
            [bool(c) for c in d["converged"]],
            list(d["final_dots"]),
            float(d["wall_time_s"]),
            bool(d["truncated"]),
            d.get("notice"),
        )


def svd_1d(apply, dim: int, eps: float = 1e-10, max_iter: int = 10_000, seed: int = 0,
           *, fixed_iters: int | None = None):
    """Dominant eigenvector of a symmetric PSD operator by power iteration.

    The start vector is a seeded standard normal draw, normalized.  Stops
    once ``|v0 . v1| >= 1 - eps``; with ``fixed_iters`` the test is skipped
    and exactly that many products are taken.  Returns ``(v, Svd1dInfo)``.
    """
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(dim)
    v0 /= norm2(v0)
    limit = fixed_iters if fixed_iters is not None else max_iter
    dot = 0.0
    for it in range(1, limit + 1):
        v1 = np.asarray(apply(v0), dtype=np.float64)
        if v1.shape != (dim,):
            raise ShapeError(f"operator returned shape {v1.shape}, expected ({dim},)")
        if not np.all(np.isfinite(v1)):
            raise NumericError(f"operator produced non-finite values at iteration {it}")
        nrm = norm2(v1)
        if nrm == 0.0:
            raise DegenerateInputError("power iterate collapsed to zero")
        v1 /= nrm
        dot = abs(float(v0 @ v1))
        if fixed_iters is None and dot >= 1.0 - eps:
            return v1, Svd1dInfo(it, True, dot, nrm)
        v0 = v1
    return v0, Svd1dInfo(limit, dot >= 1.0 - eps, dot, nrm)


def residual_gram_apply(X, U, sigma, V, l: int, v0) -> np.ndarray:
    """Apply the Gram of ``X - U S V^T`` (first ``l - 1`` components) to ``v0``.

    Uses ``X^T X``-form when ``m >= n`` and the mirrored ``X X^T``-form
    otherwise.  Requires orthonormal columns in the deflated U (V for the
    mirrored form); nothing of size m x n or n x n is formed.
    """
    m, n = shape_of(X)
    p = l - 1
    U = np.asarray(U, dtype=np.float64)[:, :p]
    V = np.asarray(V, dtype=np.float64)[:, :p]
    s = np.asarray(sigma, dtype=np.float64)[:p]
    if U.shape[0] != m or V.shape[0] != n or s.shape[0] != p:
        raise ShapeError("factor shapes do not match X")
    v0 = np.asarray(v0, dtype=np.float64)
    if m >= n:
        if v0.shape != (n,):
            raise ShapeError(f"v0 must have length {n}")
        xv = matvec(X, v0)
        vtv = matvec_transposed(V, v0)
        return (
            matvec_transposed(X, xv)
            - matvec(V, s * matvec_transposed(U, xv))
            - matvec_transposed(X, matvec(U, s * vtv))
            + matvec(V, s * s * vtv)
        )
    if v0.shape != (m,):
        raise ShapeError(f"v0 must have length {m}")
    xtv = matvec_transposed(X, v0)
    utv = matvec_transposed(U, v0)
    return (
        matvec(X, xtv)
        - matvec(U, s * matvec_transposed(V, xtv))
        - matvec(X, matvec(V, s * utv))
        + matvec(U, s * s * utv)
    )


def _dense(block) -> np.ndarray:
    return block.to_dense() if isinstance(block, CsrMatrix) else block


def _tiles(a, ranges, orientation):
    if orientation == COLLINEAR:
        if isinstance(a, CsrMatrix):
            return [a.row_block(r0, r1) for r0, r1 in ranges]
        return [a[r0:r1] for r0, r1 in ranges]
    if isinstance(a, CsrMatrix):
        return [a.col_block(c0, c1) for c0, c1 in ranges]
    return [a[:, c0:c1] for c0, c1 in ranges]


@dataclass
class LocalFactors:
    """One rank's share of the result: its rows of U plus the replicated sigma and V."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    report: IterationReport


class RankState:
    """Per-rank operands and their device placement.

    ``placement`` maps ``A``/``U``/``V``/``X``/``B`` to ``"device"`` or
    ``"host"``.  Device-placed A is uploaded once and tiled in place;
    host-placed A and V are batched to the device per task and evicted
    afterwards.
    """

    def __init__(self, a_local, n: int, k: int, comm, store: TieredStore,
                 batch_plan: BatchPlan, placement: dict | None = None,
                 U=None, sigma=None, V=None):
        placement = placement or {}
        self.comm = comm
        self.store = store
        self.batch_plan = batch_plan
        self.orientation = batch_plan.orientation
        self.ranges = batch_plan.ranges(comm.rank)
        self.n = n
        self.k = k
        rows, cols = shape_of(a_local)
        if cols != n:
            raise ShapeError(f"local slab has {cols} columns, expected {n}")
        if self.orientation != COLLINEAR and self.ranges[-1][1] != n:
            raise ShapeError("batch ranges do not cover the columns")
        if self.orientation == COLLINEAR and self.ranges[-1][1] != rows:
            raise ShapeError("batch ranges do not cover the local rows")
        self.rows = rows
        self.a_local = a_local
        self.a_device = placement.get("A", "device") == "device"
        self.v_device = placement.get("V", "device") == "device"
        self.x_device = placement.get("X", "device") == "device"
        self.b_device = placement.get("B", "device") == "device"
        self.a_sources = _tiles(a_local, self.ranges, self.orientation)
        if self.a_device:
            whole = store.fetch(BlockId("A", -1), a_local, lease=False)
            self.a_tiles = _tiles(whole, self.ranges, self.orientation)
        self.U = store.allocate(BlockId("U"), (rows, max(k, 1)), lease=False)[:, :k]
        self.V = np.zeros((n, k))
        self.sigma = np.zeros(k)
        self.p = 0
        if sigma is not None:
            p = len(sigma)
            self.U[:, :p] = U
            self.V[:, :p] = V
            self.sigma[:p] = sigma
            self.p = p
        self.queue = TaskQueue(batch_plan.q_s)
        self.floor_rel = RANK_TOL

    def close(self) -> None:
        self.queue.close()
        for bid in (BlockId("A", -1), BlockId("U")):
            if self.store.is_resident(bid):
                self.store.evict(bid)

    # -- block access ------------------------------------------------------
    def acquire_a(self, b):
        if self.a_device:
            return self.a_tiles[b], 0
        return self.store.acquire(BlockId("A", b), self.a_sources[b])

    def release_a(self, b) -> None:
        if not self.a_device:
            bid = BlockId("A", b)
            if self.store.release(bid) == 0:
                self.store.evict(bid)

    def _v_id(self, b):
        return BlockId("V", b, 0, self.p)

    def _v_source(self, b):
        if self.orientation == COLLINEAR:
            return self.V[:, : self.p]
        c0, c1 = self.ranges[b]
        return self.V[c0:c1, : self.p]

    def acquire_v(self, b=0):
        """Current deflated V (batch ``b`` for orthogonal batching)."""
        return self.store.acquire(self._v_id(b), self._v_source(b))

    def release_v(self, b=0) -> None:
        bid = self._v_id(b)
        if self.store.release(bid) == 0 and not self.v_device:
            self.store.evict(bid)

    def _v_batches(self):
        return [0] if self.orientation == COLLINEAR else range(len(self.ranges))

    def pin_v(self) -> None:
        """Upload V for the whole component when it is device-placed."""
        if self.v_device and self.p:
            for b in self._v_batches():
                self.store.fetch(self._v_id(b), self._v_source(b), lease=False)

    def unpin_v(self) -> None:
        if self.v_device and self.p:
            for b in self._v_batches():
                if self.store.is_resident(self._v_id(b)):
                    self.store.evict(self._v_id(b))

    # -- products ------------------------------------------------------------
    def local_apply(self, v) -> np.ndarray:
        """``A_local @ v`` through the batches."""
        out = np.zeros(self.rows)
        for b, (r0, r1) in enumerate(self.ranges):
            a, copied = self.acquire_a(b)
            self.store.charge(copied)
            if self.orientation == COLLINEAR:
                out[r0:r1] = matvec(a, v)
            else:
                out += matvec(a, v[r0:r1])
            self.release_a(b)
        return out

    def residual_free(self, v0) -> np.ndarray:
        """Deflated Gram applied to ``v0``; exactly two all-reduces per call."""
        p, comm, queue = self.p, self.comm, self.queue
        s = self.sigma[:p]
        U = self.U[:, :p]
        nb = len(self.ranges)
        if self.orientation == COLLINEAR:
            return self._residual_free_collinear(v0, p, s, U)

        xv_parts, vtv_parts = [None] * nb, [None] * nb

        def stage(b):
            a, copied = self.acquire_a(b)
            if p:
                vb, more = self.acquire_v(b)
                copied += more
            else:
                vb = None
            return a, vb, copied

        def work1(b, staged):
            a, vb, copied = staged
            self.store.charge(copied)
            c0, c1 = self.ranges[b]
            xv = matvec(a, v0[c0:c1])
            vtv = vb.T @ v0[c0:c1] if p else np.zeros(0)
            return xv, vtv

        def finish1(b, staged, result):
            xv_parts[b], vtv_parts[b] = result
            self.release_a(b)
            if p:
                self.release_v(b)

        queue.run(range(nb), stage, work1, finish1)
        # reduction along batches, fixed order
        xv = xv_parts[0].copy()
        vtv = vtv_parts[0].copy()
        for b in range(1, nb):
            xv += xv_parts[b]
            vtv += vtv_parts[b]

        utxv = comm.all_reduce_sum(U.T @ xv)
        w = xv - U @ (s * vtv)
        coef = s * (s * vtv - utxv)

        out = np.zeros(self.n)
        corr = np.zeros(self.n)

        def work2(b, staged):
            a, vb, copied = staged
            self.store.charge(copied)
            part = matvec_transposed(a, w)
            return part, (vb @ coef if p else None)

        def finish2(b, staged, result):
            c0, c1 = self.ranges[b]
            out[c0:c1] = result[0]
            if p:
                corr[c0:c1] = result[1]
            self.release_a(b)
            if p:
                self.release_v(b)

        queue.run(range(nb), stage, work2, finish2)
        return comm.all_reduce_sum(out) + corr

    def _residual_free_collinear(self, v0, p, s, U):
        nb = len(self.ranges)
        if p:
            vfull, copied = self.acquire_v()
            self.store.charge(copied)
            vtv = vfull.T @ v0
        else:
            vtv = np.zeros(0)
        xv = np.zeros(self.rows)

        def stage(b):
            return self.acquire_a(b)

        def work1(b, staged):
            a, copied = staged
            self.store.charge(copied)
            return matvec(a, v0)

        def finish1(b, staged, result):
            r0, r1 = self.ranges[b]
            xv[r0:r1] = result
            self.release_a(b)

        self.queue.run(range(nb), stage, work1, finish1)
        utxv = self.comm.all_reduce_sum(U.T @ xv)
        w = xv - U @ (s * vtv)
        coef = s * (s * vtv - utxv)
        parts = [None] * nb

        def work2(b, staged):
            a, copied = staged
            self.store.charge(copied)
            r0, r1 = self.ranges[b]
            return matvec_transposed(a, w[r0:r1])

        def finish2(b, staged, result):
            parts[b] = result
            self.release_a(b)

        self.queue.run(range(nb), stage, work2, finish2)
        out = parts[0].copy()
        for b in range(1, nb):
            out += parts[b]
        out = self.comm.all_reduce_sum(out)
        if p:
            out += vfull @ coef
            self.release_v()
        return out

    def form_residual(self, gen: int) -> list:
        """Write ``X = A - U S V^T`` batch by batch under ``BlockId("X", b, 0, gen)``."""
        p = self.p
        s = self.sigma[:p]
        us = self.U[:, :p] * s
        store = self.store
        if p and self.orientation == COLLINEAR:
            vfull, copied = self.acquire_v()
            store.charge(copied)
        for b, (r0, r1) in enumerate(self.ranges):
            a, copied = self.acquire_a(b)
            store.charge(copied)
            bid = BlockId("X", b, 0, gen)
            x = store.allocate(bid, shape_of(a))
            x[...] = _dense(a)
            if p:
                if self.orientation == COLLINEAR:
                    x -= us[r0:r1] @ vfull.T
                else:
                    vb, copied = self.acquire_v(b)
                    store.charge(copied)
                    x -= us @ vb.T
                    self.release_v(b)
            self.release_a(b)
            store.release(bid)
            if not self.x_device:
                store.writeback(bid)
                store.evict(bid)
        if p and self.orientation == COLLINEAR:
            self.release_v()
        return [None] * len(self.ranges)

    def drop_residual(self, gen: int) -> None:
        for b in range(len(self.ranges)):
            bid = BlockId("X", b, 0, gen)
            if self.store.is_resident(bid):
                self.store.evict(bid)
            self.store.host.discard(bid)

    def extend(self, v, info: Svd1dInfo, report: IterationReport) -> bool:
        """Append the pair, or mark the rank exhausted.

        Exhaustion is judged on the deflated operator's own estimate
        ``sqrt(||B v||)``: once the residual is rounding noise, ``A v`` for a
        noise direction ``v`` is not small and would fake a component.
        """
        estimate = float(np.sqrt(info.eigenvalue))
        scale = float(self.sigma[0]) if self.p else estimate
        if estimate <= self.floor_rel * scale or estimate == 0.0:
            self._exhausted(report, estimate)
            return False
        u = self.local_apply(v)
        sq = self.comm.all_reduce_sum(np.array([u @ u]))[0]
        sigma = float(np.sqrt(sq))
        if not np.isfinite(sigma):
            raise NumericError("non-finite singular value")
        if sigma <= RANK_TOL * scale or sigma == 0.0:
            self._exhausted(report, sigma)
            return False
        l = self.p
        self.U[:, l] = u / sigma
        self.V[:, l] = v
        self.sigma[l] = sigma
        self.p = l + 1
        return True

    def _exhausted(self, report: IterationReport, value: float) -> None:
        report.truncated = True
        report.notice = f"rank exhausted after {self.p} components (residual {value:.3e})"

    def result(self, report: IterationReport) -> LocalFactors:
        p = self.p
        return LocalFactors(self.U[:, :p].copy(), self.sigma[:p].copy(), self.V[:, :p].copy(), report)


def _drive(state: RankState, config: SvdConfig, k: int, step) -> LocalFactors:
    report = IterationReport()
    t0 = time.perf_counter()
    try:
        for l in range(1, k + 1):
            state.pin_v()
            try:
                v, info = step(state, l)
            except DegenerateInputError:
                report.truncated = True
                report.notice = f"rank exhausted after {state.p} components (zero iterate)"
                break
            finally:
                state.unpin_v()
            if not state.extend(v, info, report):
                break
            report.add(info)
            log.debug("component %d: sigma=%.6e iters=%d", l, state.sigma[l - 1], info.iterations)
    finally:
        state.close()
    report.wall_time_s = time.perf_counter() - t0
    return state.result(report)


def svd_truncated_sparse(a_local, config: SvdConfig, comm, store: TieredStore | None,
                         batch_plan: BatchPlan, placement: dict | None = None,
                         *, k: int | None = None) -> LocalFactors:
    """Residual-free driver for one rank (row slab ``a_local``, dense or CSR)."""
    store = store if store is not None else TieredStore()
    n = shape_of(a_local)[1]
    k = config.k if k is None else k
    state = RankState(a_local, n, k, comm, store, batch_plan, placement)
    state.floor_rel = residual_free_floor(n)

    def step(st, l):
        return svd_1d(st.residual_free, n, config.eps, config.max_iter, config.seed + l,
                      fixed_iters=config.fixed_iters)

    return _drive(state, config, k, step)


def svd_truncated_dense(a_local, config: SvdConfig, comm, store: TieredStore | None,
                        batch_plan: BatchPlan, placement: dict | None = None,
                        *, k: int | None = None) -> LocalFactors:
    """Explicit-residual driver for one rank: residual, Gram, then power iteration."""
    store = store if store is not None else TieredStore()
    n = shape_of(a_local)[1]
    k = config.k if k is None else k
    state = RankState(a_local, n, k, comm, store, batch_plan, placement)
    mode = REPLICATED if state.b_device else DISTRIBUTED

    def step(st, l):
        sources = st.form_residual(l)
        gram = dist_gram(sources, batch_plan, comm, store, n=n, mode=mode,
                         b_on_device=st.b_device, tag="X", gen=l)
        try:
            return svd_1d(lambda x: gram_matvec(gram, x, comm), n, config.eps, config.max_iter,
                          config.seed + l, fixed_iters=config.fixed_iters)
        finally:
            gram.release(store)
            st.drop_residual(l)

    return _drive(state, config, k, step)


def dist_compute_v(x_local, U_local, sigma, V, v0, comm, store: TieredStore | None = None,
                   batch_plan: BatchPlan | None = None, placement: dict | None = None) -> np.ndarray:
    """One residual-free application on this rank's row slab.

    ``U_local`` holds this rank's rows of U; ``sigma`` and ``V`` are
    replicated.  Returns the full (replicated) ``v1``.
    """
    store = store if store is not None else TieredStore()
    n = shape_of(x_local)[1]
    if batch_plan is None:
        ranges = (tuple(even_split(n, 1)),) * comm.size
        batch_plan = BatchPlan(1, n, ORTHOGONAL, 1, ranges, 1)
    sigma = np.asarray(sigma, dtype=np.float64)
    p = sigma.shape[0]
    state = RankState(x_local, n, p, comm, store, batch_plan, placement,
                      U=np.asarray(U_local)[:, :p], sigma=sigma, V=np.asarray(V)[:, :p])
    try:
        state.pin_v()
        try:
            return state.residual_free(np.asarray(v0, dtype=np.float64))
        finally:
            state.unpin_v()
    finally:
        state.close()
