"""Peak device memory and wall time across batch counts and queue sizes."""

import numpy as np

from oomsvd import io as mio
from oomsvd import truncated_svd

A = mio.generate(2048, 2048, "sparse", density=2e-3, seed=3)
print(f"{'n_b':>4} {'q_s':>4} {'peak bytes':>11} {'wall s':>7}")
for n_b in (2, 4, 8):
    for q_s in (1, 2):
        run = truncated_svd(A, k=3, fixed_iters=3, workers=2, n_b=n_b, q_s=q_s,
                            device_budget=300_000, transfer_cost_ns_per_byte=200)
        peak = max(s.peak_device_used for s in run.store_stats)
        print(f"{n_b:>4} {q_s:>4} {peak:>11} {run.wall_time_s:>7.3f}")
