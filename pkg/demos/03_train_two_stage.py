"""Train the edge scorer for the two-stage paths method on a small dataset.

The scorer starts out reproducing plain Greedy-Paths (its last layer is zero and
the edge weight is added back), so the first validation equals the baseline.
"""

import numpy as np

from kep import GenConfig, ScorerConfig, TrainConfig, generate, train
from kep.gen import derive_seed
from kep.train import moving_average

train_set = [generate(GenConfig(seed=derive_seed(1, i))) for i in range(300)]
val_set = [generate(GenConfig(seed=derive_seed(2, i))) for i in range(20)]

hist = train(TrainConfig(epochs=1, validate_every=100, seed=0), ScorerConfig(),
             train_set, val_set)

for v in hist.validations:
    print(f"step {v['step']:4d}: validation mean {v['mean_score']:.2f}")
ma = moving_average(hist.train_loss, 50)
print(f"loss moving average {ma[0]:.3f} -> {ma[-1]:.3f}")
print("best checkpoint:", hist.best_checkpoint)
