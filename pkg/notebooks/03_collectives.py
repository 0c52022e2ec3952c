"""In-process ranks: all-reduce and reduce sum in fixed rank order."""

import numpy as np

from oomsvd import CommGroup

group = CommGroup(4)


def rank_main(comm):
    local = np.full(3, comm.rank + 1.0)
    total = comm.all_reduce_sum(local)
    rooted = comm.reduce_sum(local, root=2)
    return total, rooted


for rank, (total, rooted) in enumerate(group.run(rank_main)):
    print(f"rank {rank}: all_reduce={total} reduce={rooted}")
print(group.stats())
