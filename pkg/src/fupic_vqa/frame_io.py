"""Frame decoding (binary PPM), video manifests and inference frame selection."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FrameFormatError(ValueError):
    """Malformed PPM header."""


class TruncatedFrameError(FrameFormatError):
    """PPM header parsed but pixel payload is short."""


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """Planar RGB raster, shape ``(3, height, width)``, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = self.data
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError(f"frame data must be (3, H, W), got {data.shape}")
        if data.shape[1] < 2 or data.shape[2] < 2:
            raise ValueError("frame must be at least 2x2")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_bytes(cls, raw: np.ndarray) -> "Frame":
        """Build from an interleaved ``(H, W, 3)`` uint8 array."""
        raw = np.asarray(raw, dtype=np.uint8)
        return cls(np.ascontiguousarray(raw.transpose(2, 0, 1), dtype=np.float64) / 255.0)

    def to_bytes(self) -> np.ndarray:
        """Interleaved ``(H, W, 3)`` uint8, rounding to the nearest code."""
        q = np.rint(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)
        return np.ascontiguousarray(q.transpose(1, 2, 0))


@dataclass
class VideoManifest:
    video_id: str
    frame_paths: list[str]
    mos: float | None = None
    total_frames: int = field(init=False)

    def __post_init__(self):
        if not self.frame_paths:
            raise ManifestError(f"video {self.video_id!r}: empty frame list")
        if self.mos is not None and not 0.0 <= self.mos <= 1.0:
            raise ManifestError(f"video {self.video_id!r}: mos out of range ({self.mos})")
        self.total_frames = len(self.frame_paths)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FrameFormatError("unexpected end of header")
    return buf[start:pos], pos


def _parse_header(buf: bytes, magic: bytes) -> tuple[int, int, int]:
    """Return (width, height, payload offset)."""
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise FrameFormatError(f"bad magic {tok[:8]!r}, expected {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FrameFormatError(f"non-integer header field {tok[:16]!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FrameFormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise FrameFormatError(f"only 8-bit maxval 255 is supported, got {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise TruncatedFrameError("missing whitespace after maxval")
    return width, height, pos + 1


def read_ppm_bytes(path: str | os.PathLike) -> np.ndarray:
    """Read a P6 file into an ``(H, W, 3)`` uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"frame file not found: {path}")
    buf = path.read_bytes()
    width, height, off = _parse_header(buf, b"P6")
    need = width * height * 3
    payload = buf[off:off + need]
    if len(payload) < need:
        raise TruncatedFrameError(f"{path}: expected {need} pixel bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def load_frame(path: str | os.PathLike) -> Frame:
    return Frame.from_bytes(read_ppm_bytes(path))


def encode_ppm(raw: np.ndarray) -> bytes:
    raw = np.asarray(raw, dtype=np.uint8)
    h, w, _ = raw.shape
    return b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes()


def save_frame(frame: Frame, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_ppm(frame.to_bytes()))


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes()


def save_pgm(gray: np.ndarray, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_pgm(gray))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    width, height, off = _parse_header(buf, b"P5")
    payload = buf[off:off + width * height]
    if len(payload) < width * height:
        raise TruncatedFrameError(f"{path}: short PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def load_manifest(path: str | os.PathLike) -> list[VideoManifest]:
    """Parse a JSON manifest; relative frame paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    base = path.parent
    out, seen = [], set()
    for entry in doc:
        try:
            vid = str(entry["video_id"])
            frames = list(entry["frames"])
        except (KeyError, TypeError):
            raise ManifestError(f"{path}: entries need 'video_id' and 'frames'") from None
        if vid in seen:
            raise ManifestError(f"duplicate video_id {vid!r}")
        seen.add(vid)
        mos = entry.get("mos")
        frames = [str(p if os.path.isabs(p) else base / p) for p in frames]
        out.append(VideoManifest(vid, frames, None if mos is None else float(mos)))
    return out


def write_manifest(videos: list[VideoManifest], path: str | os.PathLike) -> None:
    doc = [{"video_id": v.video_id, "frames": list(v.frame_paths), "mos": v.mos} for v in videos]
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def sample_frame_indices(total_frames: int, interval: int) -> list[int]:
    """Frames ``0, t, 2t, ...`` -- exactly ``floor(T/t)`` of them, or ``[0]`` for short clips."""
    if total_frames < 1 or interval < 1:
        raise ValueError("total_frames and interval must be >= 1")
    count = total_frames // interval
    if count == 0:
        return [0]
    return list(range(0, count * interval, interval))
