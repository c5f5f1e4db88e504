"""Frame ingestion and key-frame selection.

Inputs are either a directory of numbered image files (first-class, no codec
dependency) or a video container decoded by shelling out to a configured
external decoder command. Key frames are picked by greedy farthest-point
selection over per-channel intensity histograms with L1 distance, which is
deterministic and never selects duplicate-looking frames twice.
"""

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import (DecodeError, ConfigError, MissingPathError,
                     MixedDimensionsError, ShapeError, ValidationError)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
HISTOGRAM_BINS = 32


@dataclass(frozen=True)
class FrameBatch:
    """Uniform 8-bit frames (F, H, W, C) with strictly increasing timestamps."""

    video_id: str
    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.dtype != np.uint8:
            raise ShapeError("frames must be a (F, H, W, C) uint8 array")
        if len(self.timestamps) != len(self.frames):
            raise ShapeError("one timestamp per frame required")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if len(ts) and (ts[0] < 0 or np.any(np.diff(ts) <= 0)):
            raise ValidationError("timestamps must be non-negative and strictly increasing")
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class HistogramSignature:
    """Concatenated per-channel histograms; each channel block sums to 1."""

    bins: np.ndarray
    bins_per_channel: int = HISTOGRAM_BINS

    @property
    def channels(self) -> int:
        return len(self.bins) // self.bins_per_channel


@dataclass(frozen=True)
class KeyFrameSet:
    video_id: str
    indices: tuple
    frames: np.ndarray

    def __post_init__(self):
        if list(self.indices) != sorted(set(self.indices)):
            raise ValidationError("keyframe indices must be strictly increasing")


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode image {path}") from exc


def ingest_frames(path, video_id=None, stride=1, fps=None,
                  decoder_template=None) -> FrameBatch:
    """Load frames from a directory of images or a video file.

    Directories are read as sorted numbered image files; video files are
    decoded into a temporary directory with `decoder_template`, a shell command
    holding {input} and {outdir} slots (e.g. ffmpeg). `stride` keeps every
    n-th frame; `fps` sets the timestamp scale (source frames per second,
    default 1.0, so timestamps are source frame indices in seconds).
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    src = Path(path)
    if not src.exists():
        raise MissingPathError(f"input path does not exist: {src}")
    if video_id is None:
        video_id = src.stem

    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DecodeError(f"no image files found in {src}")
        return _batch_from_files(video_id, files, stride, fps or 1.0)

    if decoder_template is None:
        raise ConfigError(
            "decoding a video container requires a decoder command template")
    with tempfile.TemporaryDirectory(prefix="vidinstruct-decode-") as tmp:
        cmd = [part.format(input=str(src), outdir=tmp)
               for part in shlex.split(decoder_template)]
        proc = subprocess.run(cmd, capture_output=True)
        if proc.returncode != 0:
            raise DecodeError(
                f"decoder failed ({proc.returncode}): {proc.stderr.decode(errors='replace')[:500]}")
        files = sorted(p for p in Path(tmp).iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DecodeError("decoder produced no frames")
        return _batch_from_files(video_id, files, stride, fps or 1.0)


def _batch_from_files(video_id, files, stride, fps) -> FrameBatch:
    picked = files[::stride]
    images = [_load_image(p) for p in picked]
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise MixedDimensionsError(
            f"frames have mixed dimensions: {sorted(shapes)}")
    timestamps = np.arange(len(files), dtype=np.float64)[::stride] / fps
    return FrameBatch(video_id=video_id, frames=np.stack(images),
                      timestamps=timestamps)


def frame_signature(frame: np.ndarray, bins: int = HISTOGRAM_BINS) -> HistogramSignature:
    """Per-channel `bins`-bin intensity histogram, L1-normalized per channel."""
    arr = np.asarray(frame)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.dtype != np.uint8:
        raise ShapeError("frame must be a (H, W, C) or (H, W) uint8 array")
    return HistogramSignature(
        bins=kernels.channel_histograms(np.ascontiguousarray(arr), bins),
        bins_per_channel=bins)


def signature_distance(a: HistogramSignature, b: HistogramSignature) -> float:
    """L1 distance between signatures; zero iff identical."""
    if len(a.bins) != len(b.bins):
        raise ShapeError("signatures have different bin counts")
    return kernels.l1_distance(a.bins, b.bins)


def select_keyframes(batch: FrameBatch, k: int) -> KeyFrameSet:
    """Greedy farthest-point selection in signature space.

    Seeds with frame 0, then repeatedly adds the frame with the maximum
    minimum L1 distance to the selected set (ties to the lowest index). Stops
    early when every remaining distance is zero, so a constant video yields a
    single key frame regardless of k. Indices come back sorted.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(batch) == 0:
        raise ValidationError("cannot select key frames from an empty batch")
    signatures = np.stack([frame_signature(f).bins for f in batch.frames])
    order = kernels.farthest_point(np.ascontiguousarray(signatures), k)
    indices = tuple(sorted(int(i) for i in order))
    return KeyFrameSet(video_id=batch.video_id, indices=indices,
                       frames=batch.frames[list(indices)])


def save_keyframes(keyframes: KeyFrameSet, outdir) -> Path:
    """Write selected frames as PNGs plus a JSON manifest; returns manifest path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for idx, frame in zip(keyframes.indices, keyframes.frames):
        name = f"{keyframes.video_id}_{idx:06d}.png"
        Image.fromarray(frame).save(out / name)
        files.append(name)
    manifest = {"video_id": keyframes.video_id,
                "indices": list(keyframes.indices),
                "files": files}
    manifest_path = out / f"{keyframes.video_id}_keyframes.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path
