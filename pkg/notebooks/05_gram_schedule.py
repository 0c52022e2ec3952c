"""Lower-triangle Gram tasks, replicated and distributed assembly."""

import numpy as np

from oomsvd import CommGroup, TieredStore, choose_partition, dist_gram, gram_tasks, plan_batches

print("tasks for n_b=4, q_s=2:", [(t.i, t.j, t.slot) for t in gram_tasks(4, 2)])

X = np.random.default_rng(1).standard_normal((40, 12))
plan = choose_partition(*X.shape, workers=2)
batches = plan_batches(plan, "orthogonal", n_b=4, q_s=2)

for mode in ("replicated", "distributed"):
    def rank_main(comm):
        lo, hi = plan.slabs[comm.rank]
        res = dist_gram(X[lo:hi], batches, comm, TieredStore(), mode=mode)
        return res.B, res.row_range

    outs = CommGroup(2).run(rank_main)
    B = outs[0][0] if mode == "replicated" else np.vstack([o[0] for o in outs])
    print(f"{mode:>11}: max |B - X^T X| = {np.abs(B - X.T @ X).max():.2e}")
