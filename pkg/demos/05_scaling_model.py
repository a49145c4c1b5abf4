"""The analytic cost model behind the engine, evaluated exactly.

Work is W(n) = n^2 output elements, sequential time is T1(n) = n^3 multiply-
adds, and each of the p workers ships D(n, p) = n^2 / sqrt(p) elements per
input plane.  Holding communication efficiency requires n to grow like
c * sqrt(p), and at that limit each worker's memory is c^2 — independent of p,
which is what makes the algorithm memory-scalable.

Run as: python3 demos/05_scaling_model.py
"""

from cannonmul.analysis import (
    ScalingModel,
    communication_volume,
    memory_per_processor_at_isoefficiency,
    min_scaling_order,
    problem_size,
    sequential_time_units,
)

n = 1024
print(f"one {n}x{n} multiply:")
print(f"  W(n)  = {problem_size(n):,} output elements")
print(f"  T1(n) = {sequential_time_units(n):,} multiply-add units")

print("\nper-worker shifted volume at fixed n (exact rationals):")
for p in (4, 16, 64, 256):
    d = communication_volume(n, p)
    print(f"  p={p:>3}: D = n^2/sqrt(p) = {d} = {float(d):,.0f} elements")

c = 8
print(f"\ngrowing the problem with the machine (c = {c}):")
print(f"{'p':>5}{'n_min':>8}{'mem/worker':>12}")
for p in (4, 16, 64, 256):
    model = ScalingModel(n=min_scaling_order(p, c), p=p, c=c)
    print(f"{p:>5}{model.n:>8}{model.memory_per_processor():>12}")

assert memory_per_processor_at_isoefficiency(c) == c * c
print(f"\nmem/worker stays {c * c} however large the machine gets: the")
print("problem can grow with p forever without exhausting any single node.")
