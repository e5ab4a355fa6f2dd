"""
Covering every pixel of a 4K frame
==================================

A 3840x2160 frame cut into 384x384 patches, compared against the share of
pixels a grid mini-patch sampler or a centre crop would keep.
"""

import numpy as np

from fupic_vqa.sampler import StrategySpec, coverage, partition

frame = np.random.default_rng(0).uniform(size=(3, 2160, 3840)).astype(np.float32)
ps = partition(frame, 384)
print("patches:", ps.n, "grid:", ps.grid_shape)

# The last row of patches is pulled up so it ends on the frame border,
# overlapping the row above by 144 pixels instead of padding.
rows = sorted({r for r, _ in ps.origins})
print("row origins:", rows)

# Putting the patches back reproduces the source bit for bit.
print("stitch exact:", np.array_equal(ps.stitch(), frame))

for spec in (StrategySpec("grid_minipatch", input_side=224),
             StrategySpec("center_crop", input_side=384),
             StrategySpec("resize", input_side=224),
             StrategySpec("fupic", patch_size=384)):
    print(f"{spec.kind:>15}: {coverage(spec, 3840, 2160):.5f}")
