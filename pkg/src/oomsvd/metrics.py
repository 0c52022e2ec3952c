"""Run metrics with a flat, stable JSON and CSV schema."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

from .solver import SvdRun

# list-valued fields are joined with ';' in CSV cells
_LIST_FIELDS = {"peak_device_bytes": int, "iterations": int, "converged": bool, "final_dots": float}


@dataclass
class RunMetrics:
    wall_time_s: float
    peak_device_bytes: list[int]
    h2d_bytes: int
    d2h_bytes: int
    h2d_count: int
    d2h_count: int
    all_reduce_calls: int
    reduce_calls: int
    comm_bytes: int
    iterations: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    final_dots: list[float] = field(default_factory=list)
    truncated: bool = False
    rows: int = 0
    cols: int = 0
    workers: int = 1
    n_b: int = 1
    q_s: int = 1
    orientation: str = "orthogonal"
    k: int = 0
    eps: float = 1e-10
    max_iter: int = 10_000
    fixed_iters: int | None = None
    seed: int = 0
    path: str = "auto"
    device_budget: int | None = None
    transfer_cost_ns_per_byte: float = 0.0
    oom_degree: int = 0

    @classmethod
    def from_run(cls, run: SvdRun, transfer_cost_ns_per_byte: float = 0.0) -> "RunMetrics":
        stats = run.store_stats
        cfg = run.config
        return cls(
            wall_time_s=run.wall_time_s,
            peak_device_bytes=[s.peak_device_used for s in stats],
            h2d_bytes=sum(s.h2d_bytes for s in stats),
            d2h_bytes=sum(s.d2h_bytes for s in stats),
            h2d_count=sum(s.h2d_count for s in stats),
            d2h_count=sum(s.d2h_count for s in stats),
            all_reduce_calls=run.comm_stats.all_reduce_calls,
            reduce_calls=run.comm_stats.reduce_calls,
            comm_bytes=run.comm_stats.bytes_moved,
            iterations=list(run.report.iterations),
            converged=list(run.report.converged),
            final_dots=list(run.report.final_dots),
            truncated=run.report.truncated,
            rows=run.plan.m,
            cols=run.plan.n,
            workers=run.plan.workers,
            n_b=run.batches.n_b,
            q_s=run.batches.q_s,
            orientation=run.batches.orientation,
            k=cfg.k,
            eps=cfg.eps,
            max_iter=cfg.max_iter,
            fixed_iters=cfg.fixed_iters,
            seed=cfg.seed,
            path=run.path,
            device_budget=run.assessment.device_budget,
            transfer_cost_ns_per_byte=transfer_cost_ns_per_byte,
            oom_degree=run.assessment.degree,
        )

    @property
    def max_peak_device_bytes(self) -> int:
        return max(self.peak_device_bytes, default=0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunMetrics":
        return cls.from_dict(json.loads(text))

    def to_csv_row(self) -> dict:
        row = {}
        for name, value in self.to_dict().items():
            if name in _LIST_FIELDS:
                row[name] = ";".join(repr(v) for v in value)
            elif value is None:
                row[name] = ""
            else:
                row[name] = repr(value) if isinstance(value, float) else str(value)
        return row

    @classmethod
    def from_csv_row(cls, row: dict) -> "RunMetrics":
        out = {}
        for f in fields(cls):
            cell = row[f.name]
            if f.name in _LIST_FIELDS:
                conv = _LIST_FIELDS[f.name]
                parts = cell.split(";") if cell else []
                out[f.name] = [p == "True" if conv is bool else conv(p) for p in parts]
            else:
                out[f.name] = _parse_scalar(f.name, cell)
        return cls(**out)


_INT = {"h2d_bytes", "d2h_bytes", "h2d_count", "d2h_count", "all_reduce_calls", "reduce_calls",
        "comm_bytes", "rows", "cols", "workers", "n_b", "q_s", "k", "max_iter", "seed", "oom_degree"}
_OPTIONAL_INT = {"fixed_iters", "device_budget"}
_FLOAT = {"wall_time_s", "eps", "transfer_cost_ns_per_byte"}


def _parse_scalar(name: str, cell: str):
    if name in _INT:
        return int(cell)
    if name in _OPTIONAL_INT:
        return int(cell) if cell else None
    if name in _FLOAT:
        return float(cell)
    if name == "truncated":
        return cell == "True"
    return cell


CSV_FIELDS = [f.name for f in fields(RunMetrics)]


def write_csv(fh, metrics: list[RunMetrics]) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for m in metrics:
        writer.writerow(m.to_csv_row())


def read_csv(fh) -> list[RunMetrics]:
    return [RunMetrics.from_csv_row(row) for row in csv.DictReader(fh)]


def to_csv_text(metrics: list[RunMetrics]) -> str:
    buf = io.StringIO()
    write_csv(buf, metrics)
    return buf.getvalue()
