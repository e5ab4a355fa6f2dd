"""
From patches to a frame score
=============================

Each patch gets a raw quality score and a weight logit from the toy
encoder. The frame score is the softmax-weighted sum of patch scores; with
equal logits it falls back to the plain mean.
"""

import numpy as np

from fupic_vqa.model import ModelConfig, forward_frame, init_params
from fupic_vqa.sampler import partition
from fupic_vqa.scoring import aggregate_mean, aggregate_region_aware, weight_grid, weight_heatmap
from fupic_vqa.synthetic import texture

rng = np.random.default_rng(0)
params = init_params(ModelConfig(), rng)
# give the weight head something to say (it starts at zero)
params.arrays["weight_w"] = rng.normal(size=32) * 0.5

frame = texture(rng, 192, 256).transpose(2, 0, 1)
ps = partition(frame, 64)
outputs = forward_frame(ps, params, chunk=4)

region = aggregate_region_aware(outputs)
plain = aggregate_mean(outputs)
print(f"region-aware frame score {region.value:.4f}, plain mean {plain.value:.4f}")

grid = weight_grid(region, ps.grid_shape)
print("patch weights (rows x cols):")
print(np.array2string(grid, precision=3))
print("heatmap size:", weight_heatmap(grid, cell=8).shape)

# zero the weight head again: every patch counts equally
params.arrays["weight_w"][:] = 0.0
same = aggregate_region_aware(forward_frame(ps, params))
print("equal logits match the mean:", same.value == aggregate_mean(forward_frame(ps, params)).value)
