"""
Checking hand-written gradients
===============================

Backpropagation through the Haar fusion, windowed attention, both heads
and the softmax aggregation is written out by hand. Central differences
confirm it, and the error shrinks with the square of the step.
"""

import numpy as np

from fupic_vqa.model import ModelConfig, init_params
from fupic_vqa.sampler import SupervisionUnit, partition
from fupic_vqa.trainer import compute_gradients, grad_check

rng = np.random.default_rng(0)
cfg = ModelConfig(patch_size=16, token_side=2, dim=8, depth=2, window=2, heads=2)
params = init_params(cfg, rng)
params.arrays["weight_w"] = rng.normal(size=8) * 0.3
unit = SupervisionUnit(partition(rng.uniform(size=(3, 32, 32)), 16), 0.8)

per_group = {}
print("max relative error:", grad_check(params, unit, epsilon=1e-3, per_group=per_group))
for name in ("alpha", "le_w", "blocks.1.qkv_w", "weight_w"):
    print(f"  {name:>15}: {per_group[name]:.2e}")

for eps in (1e-1, 1e-2, 1e-3):
    print(f"eps={eps:g}: {grad_check(params, unit, epsilon=eps, max_per_group=8):.2e}")

# chunked back-propagation gives the same gradient as one pass
_, full = compute_gradients(unit, params)
_, chunked = compute_gradients(unit, params, micro_batch=1)
print("micro-batch difference:", max(np.abs(full[k] - chunked[k]).max() for k in full))
