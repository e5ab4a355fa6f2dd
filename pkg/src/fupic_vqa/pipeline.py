"""Frame loading with caching, and manifest-level scoring."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .frame_io import Frame, VideoManifest, read_ppm_bytes, sample_frame_indices
from .model import ModelParams, forward_frame
from .sampler import PatchSet, partition, random_crop
from .scoring import (FrameScore, VideoScore, aggregate_mean, aggregate_region_aware,
                      video_score)

AGGREGATORS = {"region": aggregate_region_aware, "mean": aggregate_mean}


class FrameLoader:
    """Reads frames on demand and keeps the raw bytes (not floats) in memory."""

    def __init__(self, cache: bool = True):
        self._cache: dict[str, np.ndarray] | None = {} if cache else None

    def raw(self, path: str) -> np.ndarray:
        if self._cache is None:
            return read_ppm_bytes(path)
        arr = self._cache.get(path)
        if arr is None:
            arr = self._cache[path] = read_ppm_bytes(path)
        return arr

    def frame(self, path: str) -> Frame:
        return Frame.from_bytes(self.raw(path))


def video_rng(seed: int, video_id: str) -> np.random.Generator:
    """Per-video generator, independent of processing order."""
    return np.random.default_rng([seed, zlib.crc32(video_id.encode())])


def frame_patch_sets(video: VideoManifest, loader: FrameLoader, patch_size: int, interval: int,
                     strategy: str = "fupic", rng: np.random.Generator | None = None
                     ) -> list[PatchSet]:
    sets = []
    for idx in sample_frame_indices(video.total_frames, interval):
        frame = loader.frame(video.frame_paths[idx])
        fid = f"{video.video_id}:{idx}"
        if strategy == "fupic":
            sets.append(partition(frame, patch_size, fid))
        elif strategy == "random_crop":
            sets.append(random_crop(frame, patch_size, rng, fid))
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
    return sets


def score_frame(patch_set: PatchSet, params: ModelParams, aggregation: str = "region",
                chunk: int | None = None) -> FrameScore:
    return AGGREGATORS[aggregation](forward_frame(patch_set, params, chunk))


def score_video(video: VideoManifest, params: ModelParams, interval: int = 10,
                loader: FrameLoader | None = None, aggregation: str = "region",
                chunk: int | None = None, strategy: str = "fupic", seed: int = 0) -> VideoScore:
    loader = loader or FrameLoader(cache=False)
    rng = video_rng(seed, video.video_id) if strategy == "random_crop" else None
    sets = frame_patch_sets(video, loader, params.config.patch_size, interval, strategy, rng)
    frames = [score_frame(ps, params, aggregation, chunk) for ps in sets]
    return video_score(frames, video.video_id)


def score_videos(videos: Sequence[VideoManifest], params: ModelParams, interval: int = 10,
                 workers: int = 1, **kwargs) -> list[VideoScore]:
    """Score many videos; results come back in manifest order whatever ``workers`` is."""
    if workers <= 1:
        return [score_video(v, params, interval, **kwargs) for v in videos]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda v: score_video(v, params, interval, **kwargs), videos))
