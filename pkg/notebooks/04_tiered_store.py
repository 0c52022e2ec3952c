"""Explicit host/device traffic under a device budget."""

import numpy as np

from oomsvd import BlockId, CapacityError, TieredStore

store = TieredStore(device_budget=2048)
host = np.arange(128, dtype=float)  # 1024 bytes
a, b, c = BlockId("A", 0), BlockId("A", 1), BlockId("A", 2)
store.fetch(a, host, lease=False)
store.fetch(b, host.copy(), lease=False)
try:
    store.fetch(c, host.copy(), lease=False)
except CapacityError as exc:
    print("refused:", exc)
store.evict(a)
store.fetch(c, host.copy(), lease=False)
print(store.stats())
