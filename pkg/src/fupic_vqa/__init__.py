"""Full-pixel covering no-reference video quality assessment in numpy."""

from .frame_io import Frame, VideoManifest, load_frame, load_manifest, sample_frame_indices
from .haar import FreqMaps, haar_forward, haar_inverse
from .metrics import plcc, srcc
from .model import (ModelConfig, ModelParams, forward_frame, init_params, load_checkpoint,
                    save_checkpoint)
from .pipeline import score_video, score_videos
from .sampler import PatchSet, StrategySpec, SupervisionUnit, coverage, partition
from .scoring import (FrameScore, VideoScore, aggregate_mean, aggregate_region_aware,
                      video_score)
from .trainer import TrainConfig, compute_gradients, grad_check, train

__all__ = [
    "Frame", "VideoManifest", "load_frame", "load_manifest", "sample_frame_indices",
    "FreqMaps", "haar_forward", "haar_inverse", "plcc", "srcc",
    "ModelConfig", "ModelParams", "forward_frame", "init_params", "load_checkpoint",
    "save_checkpoint", "score_video", "score_videos",
    "PatchSet", "StrategySpec", "SupervisionUnit", "coverage", "partition",
    "FrameScore", "VideoScore", "aggregate_mean", "aggregate_region_aware", "video_score",
    "TrainConfig", "compute_gradients", "grad_check", "train",
]
