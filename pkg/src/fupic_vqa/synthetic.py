"""Synthetic blur-graded video corpus for desk-scale training runs.

Each video is a drifting random texture blurred by a per-video Gaussian
sigma; its MOS falls linearly with sigma, so quality ordering is known
exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .frame_io import VideoManifest, encode_ppm, write_manifest


def texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Band-limited colour texture in [0, 1], shape ``(H, W, 3)``.

    Mixes block noise at a few scales with pixel noise so that every video
    carries comparable fine detail before blurring.
    """
    img = np.zeros((height, width, 3))
    for cell, amp in ((32, 0.35), (8, 0.3), (2, 0.2), (1, 0.15)):
        gh, gw = -(-height // cell), -(-width // cell)
        layer = rng.uniform(-1, 1, size=(gh, gw, 3))
        img += amp * np.kron(layer, np.ones((cell, cell, 1)))[:height, :width]
    return np.clip(0.5 + 0.5 * img, 0.0, 1.0)


def blurred_frames(rng: np.random.Generator, n_frames: int, height: int, width: int,
                   sigma: float, drift: int = 2) -> list[np.ndarray]:
    base = texture(rng, height, width)
    frames = []
    for t in range(n_frames):
        img = np.roll(base, (t * drift, t * drift // 2), axis=(0, 1))
        if sigma > 0:
            img = gaussian_filter(img, sigma=(sigma, sigma, 0), mode="wrap")
        frames.append(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8))
    return frames


def make_corpus(root: str | os.PathLike, n_videos: int = 64, n_frames: int = 20,
                width: int = 256, height: int = 192, max_sigma: float = 2.5,
                seed: int = 0) -> list[VideoManifest]:
    """Write PPM frames plus ``manifest.json`` under ``root``.

    Blur sigmas are evenly spaced over ``[0, max_sigma]`` and assigned to
    videos in a seeded random order; ``mos = 1 - sigma / max_sigma``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    sigmas = np.linspace(0.0, max_sigma, n_videos)[rng.permutation(n_videos)]
    videos = []
    for v, sigma in enumerate(sigmas):
        vid = f"v{v:03d}"
        vdir = root / vid
        vdir.mkdir(exist_ok=True)
        paths = []
        for t, raw in enumerate(blurred_frames(rng, n_frames, height, width, float(sigma))):
            p = vdir / f"{t:04d}.ppm"
            p.write_bytes(encode_ppm(raw))
            paths.append(str(p))
        videos.append(VideoManifest(vid, paths, float(1.0 - sigma / max_sigma)))
    write_manifest(videos, root / "manifest.json")
    return videos
