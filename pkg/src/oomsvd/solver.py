"""Top-level entry point: plan, place, run N ranks, assemble the factors."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .comm import DEFAULT_TIMEOUT, CommGroup, CommStats
from .errors import ConfigError
from .linalg import CsrMatrix, SvdFactors, as_dense, shape_of
from .partition import (
    COLUMN,
    ORTHOGONAL,
    BatchPlan,
    OomAssessment,
    PartitionPlan,
    choose_partition,
    classify_oom,
    estimate_memory,
    plan_batches,
)
from .power import (
    AUTO,
    DENSE_GRAM,
    RESIDUAL_FREE,
    IterationReport,
    SvdConfig,
    svd_truncated_dense,
    svd_truncated_sparse,
)
from .store import FileHostTier, StoreStats, TieredStore


@dataclass
class SvdRun:
    factors: SvdFactors
    report: IterationReport
    config: SvdConfig
    path: str
    plan: PartitionPlan
    batches: BatchPlan
    assessment: OomAssessment
    store_stats: list[StoreStats] = field(default_factory=list)
    comm_stats: CommStats = field(default_factory=CommStats)
    wall_time_s: float = 0.0


def canonical_sign(U: np.ndarray, V: np.ndarray) -> None:
    """Flip pairs in place so the largest-magnitude entry of each v is positive."""
    for l in range(V.shape[1]):
        idx = int(np.argmax(np.abs(V[:, l])))
        if V[idx, l] < 0:
            V[:, l] *= -1
            U[:, l] *= -1


def _transpose(a):
    return a.transpose() if isinstance(a, CsrMatrix) else np.ascontiguousarray(a.T)


def _slab(a, start, stop):
    return a.row_block(start, stop) if isinstance(a, CsrMatrix) else a[start:stop]


def _unlimited(estimate, path) -> OomAssessment:
    names = ["A", "U", "Sigma", "V"] + (["X", "B"] if path == DENSE_GRAM else [])
    return OomAssessment(estimate.s_a, estimate.s_svd, 0, {x: "device" for x in names})


def truncated_svd(
    A,
    config: SvdConfig | None = None,
    *,
    workers: int = 1,
    n_b: int = 1,
    q_s: int = 1,
    orientation: str = ORTHOGONAL,
    device_budget: int | None = None,
    transfer_cost_ns_per_byte: float = 0.0,
    host_dir=None,
    timeout: float = DEFAULT_TIMEOUT,
    **config_kwargs,
) -> SvdRun:
    """Rank-k SVD of a dense array or :class:`CsrMatrix` on ``workers`` in-process ranks.

    Extra keyword arguments build the :class:`SvdConfig` when ``config`` is
    omitted (``k``, ``eps``, ``max_iter``, ``seed``, ``path``,
    ``fixed_iters``).  ``device_budget`` is per rank, in bytes; ``None``
    means unlimited.
    """
    if config is None:
        config = SvdConfig(**config_kwargs)
    elif config_kwargs:
        raise ConfigError("pass either a config or keyword overrides, not both")
    sparse = isinstance(A, CsrMatrix)
    if not sparse:
        A = as_dense(A)
    m, n = shape_of(A)
    k = config.resolve_k(m, n)
    path = config.path
    if path == AUTO:
        path = RESIDUAL_FREE if sparse else DENSE_GRAM
    config = replace(config, k=k, path=path)

    plan = choose_partition(m, n, workers, k)
    batches = plan_batches(plan, orientation, n_b, q_s)
    density = A.nnz / (m * n) if sparse else 1.0
    estimate = estimate_memory(m, n, k, sparse, density)
    if device_budget is None:
        assessment = _unlimited(estimate, path)
    else:
        assessment = classify_oom(estimate, device_budget, workers=workers, n_b=n_b, path=path)

    # canonical frame: the partitioned axis becomes the rows
    placement = dict(assessment.placement)
    if plan.axis == COLUMN:
        A = _transpose(A)
        placement["U"], placement["V"] = placement.get("V", "device"), placement.get("U", "device")
    slabs = [_slab(A, s0, s1) for s0, s1 in plan.slabs]

    stores = []
    for r in range(workers):
        host = FileHostTier(Path(host_dir) / f"rank{r}") if host_dir is not None else None
        stores.append(
            TieredStore(device_budget, host=host, transfer_cost_ns_per_byte=transfer_cost_ns_per_byte)
        )
    driver = svd_truncated_dense if path == DENSE_GRAM else svd_truncated_sparse
    group = CommGroup(workers, timeout)

    def rank_main(comm):
        return driver(slabs[comm.rank], config, comm, stores[comm.rank], batches, placement, k=k)

    t0 = time.perf_counter()
    results = group.run(rank_main)
    wall = time.perf_counter() - t0

    first = results[0]
    U = np.vstack([r.U for r in results])
    V = first.V
    sigma = first.sigma
    if plan.axis == COLUMN:
        U, V = V, U
    U, V = np.array(U), np.array(V)
    canonical_sign(U, V)
    report = first.report
    report.wall_time_s = wall
    return SvdRun(
        SvdFactors(U, sigma.copy(), V),
        report,
        config,
        path,
        plan,
        batches,
        assessment,
        [s.stats() for s in stores],
        group.stats(),
        wall,
    )
