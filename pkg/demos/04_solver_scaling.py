"""How exact solve time grows with graph size, and how much it varies."""

from kep.harness import solver_scaling

runs, table = solver_scaling(range(5, 11), per_size=10, time_limit=60.0, seed=0, k=3)
print("size  median(s)   min(s)    max(s)   max/min")
for row in table:
    print(f"{row['size']:4d}  {row['median']:9.4f} {row['min']:9.4f} {row['max']:9.4f} "
          f"{row['max'] / row['min']:8.1f}")
