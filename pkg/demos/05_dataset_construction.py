"""
Building a balanced dataset
===========================

Clip indicators, a greedy pick of clips that spreads evenly over five bins
per indicator, and Bradley-Terry scaling of pair-comparison votes to [0, 1].
"""

import itertools

import numpy as np

from fupic_vqa.dataset_tools import (PairComparisonRecord, bradley_terry_mos, indicator_bins,
                                     indicators, representative_sample, uniformity_objective)
from fupic_vqa.synthetic import blurred_frames

rng = np.random.default_rng(0)
pool = []
for sigma in np.linspace(0, 3, 20):
    clip = [f.transpose(2, 0, 1) / 255.0 for f in blurred_frames(rng, 3, 64, 64, sigma)]
    pool.append(indicators(clip))
print("first clip:", pool[0])

picked = representative_sample(pool, 5)
bins = indicator_bins(pool)
print("picked clips:", picked)
print("objective, picked vs first five:", uniformity_objective(bins, picked),
      uniformity_objective(bins, range(5)))

# Votes where a hidden quality ordering decides most contests.
quality = {"a": 2.0, "b": 1.0, "c": 0.0, "d": -1.5}
records = []
for x, y in itertools.combinations(quality, 2):
    p = 1 / (1 + np.exp(quality[y] - quality[x]))
    wins = int(rng.binomial(20, p))
    records += [PairComparisonRecord(x, y, wins)] if wins else []
    records += [PairComparisonRecord(y, x, 20 - wins)] if wins < 20 else []
for r in bradley_terry_mos(records):
    print(f"{r.video_id}: {r.mos:.3f}")
