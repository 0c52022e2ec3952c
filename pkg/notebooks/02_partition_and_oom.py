"""Partition choice, batch plans and out-of-memory classification."""

from oomsvd import DegreeTwoError, choose_partition, classify_oom, estimate_memory, plan_batches

for m, n in [(1000, 200), (200, 1000), (300, 300)]:
    plan = choose_partition(m, n, workers=4, k=8)
    print(f"{m}x{n}: axis={plan.axis} slabs={plan.slabs}")

plan = choose_partition(1000, 200, workers=2)
print("orthogonal batches:", plan_batches(plan, "orthogonal", n_b=3).ranges(0))
print("collinear batches :", plan_batches(plan, "collinear", n_b=3).ranges(1))

est = estimate_memory(4096, 4096, 8, sparse=True, density=1e-3)
for budget in (10**9, 10**6, 10**3):
    try:
        a = classify_oom(est, budget, workers=2, n_b=8)
    except DegreeTwoError as exc:
        print(f"budget {budget:>10}: {exc}")
        continue
    print(f"budget {budget:>10}: degree {a.degree} placement {a.placement}")
