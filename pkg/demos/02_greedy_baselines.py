"""Greedy-Paths and Greedy-Cycles on full-size random instances."""

import time

import numpy as np

from kep import GenConfig, generate, greedy_cycles, greedy_paths, score, validate
from kep.gen import derive_seed

count = 50
paths, cycles, t_paths = [], [], []
for i in range(count):
    inst = generate(GenConfig(seed=derive_seed(2024, i)))  # 300 nodes, 5500 edges
    t0 = time.perf_counter()
    p = greedy_paths(inst)
    t_paths.append(time.perf_counter() - t0)
    c = greedy_cycles(inst)
    assert validate(inst, p).valid and validate(inst, c).valid
    paths.append(score(inst, p))
    cycles.append(score(inst, c))

print(f"greedy paths : mean {np.mean(paths):7.2f}  std {np.std(paths):5.2f}")
print(f"greedy cycles: mean {np.mean(cycles):7.2f}  std {np.std(cycles):5.2f}")
print(f"paths takes {1000 * np.median(t_paths):.1f} ms per instance (median)")

# The stopping rule matters: restarting after a failed cycle attempt finds more.
inst = generate(GenConfig(seed=7))
print("cycles, stop on first failure:", round(score(inst, greedy_cycles(inst)), 2))
print("cycles, restart after failures:", round(score(inst, greedy_cycles(inst, restart=True)), 2))
