"""Synthetic clips, the lossless latent codec, clip sampling and joint batches.

Pixels live in [-1, 1] with layout (F, H, W, C). Latents use the same layout
after space-to-depth.
"""

from __future__ import annotations

import os
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np


@dataclass
class VideoClip:
    pixels: np.ndarray  # (F, H, W, C) in [-1, 1]
    class_label: int | None = None

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise ValueError(f"clip must be (F, H, W, C), got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < -1.0 or self.pixels.max() > 1.0):
            raise ValueError("clip pixels must lie in [-1, 1]")

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]


@dataclass
class JointBatch:
    latents: np.ndarray  # (B, F_video + F_img, H, W, C)
    temporal_valid: int  # leading frames taking part in temporal modelling
    labels: np.ndarray | None = None

    @property
    def extra_images(self) -> int:
        return self.latents.shape[1] - self.temporal_valid


# ---------------------------------------------------------------- synthetic video


def synth_moving_shapes(
    seed: int,
    frames: int,
    height: int,
    width: int,
    num_classes: int = 4,
    label: int | None = None,
    channels: int = 1,
    speed: float = 1.0,
    size: int | None = None,
) -> VideoClip:
    """A bright square on a dark field, moving in the class's direction and wrapping at the borders.

    Class ``k`` moves at angle ``2 pi k / num_classes``.
    """
    if min(height, width) < 8 or frames < 1:
        raise ValueError("frame extents must be >= 8 and frames >= 1")
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    rng = np.random.default_rng(seed)
    if label is None:
        label = int(rng.integers(num_classes))
    elif not 0 <= label < num_classes:
        raise ValueError(f"label {label} outside [0, {num_classes})")
    side = size or max(2, min(height, width) // 4)
    angle = 2.0 * np.pi * label / num_classes
    vel = speed * np.array([np.sin(angle), np.cos(angle)])  # (row, col)
    start = rng.uniform(0, [height, width])
    level = rng.uniform(0.5, 1.0)
    pixels = np.full((frames, height, width, channels), -1.0)
    offs = np.arange(side)
    for f in range(frames):
        r0, c0 = np.rint(start + f * vel).astype(int)
        rows = (r0 + offs) % height
        cols = (c0 + offs) % width
        pixels[f, rows[:, None], cols[None, :], :] = level
    return VideoClip(pixels, label)


def square_centroid(frame: np.ndarray) -> np.ndarray:
    """Centre of mass of above-background pixels, (row, col); ignores wrap-around."""
    mask = frame.reshape(frame.shape[0], frame.shape[1], -1).max(axis=-1) > -1.0
    r, c = np.nonzero(mask)
    return np.array([r.mean(), c.mean()])


# ---------------------------------------------------------------- clips


def clip_sample(video: np.ndarray, interval: int, frames: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """``frames`` frames spaced ``interval`` apart from a random start in ``video`` (L, ...)."""
    if interval < 1 or frames < 1:
        raise ValueError("interval and frames must be positive")
    span = 1 + (frames - 1) * interval
    length = len(video)
    if length < span:
        raise ValueError(f"source has {length} frames, need at least {span}")
    rng = np.random.default_rng(rng)
    i0 = int(rng.integers(0, length - span + 1))
    return np.asarray(video)[i0 : i0 + span : interval]


def hflip_augment(clip: np.ndarray, p: float = 0.5, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Mirror every frame along the width axis with probability ``p`` (all or nothing)."""
    rng = np.random.default_rng(rng)
    if rng.random() < p:
        return np.asarray(clip)[:, :, ::-1].copy()
    return np.asarray(clip)


# ---------------------------------------------------------------- codec


def codec_encode(pixels: np.ndarray, factor: int = 8) -> np.ndarray:
    """Space-to-depth: (..., H, W, C) -> (..., H/f, W/f, f*f*C). Lossless."""
    x = np.asarray(pixels)
    *lead, h, w, c = x.shape
    if h % factor or w % factor:
        raise ValueError(f"extents {h}x{w} not divisible by codec factor {factor}")
    n = len(lead)
    x = x.reshape(*lead, h // factor, factor, w // factor, factor, c)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, h // factor, w // factor, factor * factor * c)


def codec_decode(latents: np.ndarray, factor: int = 8) -> np.ndarray:
    """Exact inverse of :func:`codec_encode`."""
    z = np.asarray(latents)
    *lead, h, w, cc = z.shape
    if cc % (factor * factor):
        raise ValueError(f"{cc} latent channels not divisible by {factor}^2")
    c = cc // (factor * factor)
    n = len(lead)
    z = z.reshape(*lead, h, w, factor, factor, c)
    z = z.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return z.reshape(*lead, h * factor, w * factor, c)


# ---------------------------------------------------------------- batches


def build_joint_batch(
    clips: np.ndarray,
    extra_images: int,
    frame_pool: np.ndarray | None = None,
    rng: np.random.Generator | int | None = None,
    labels=None,
) -> JointBatch:
    """Append ``extra_images`` independently drawn frames after each clip's video frames.

    ``clips`` is (B, F, H, W, C); ``frame_pool`` is any (N, H, W, C) stack of
    frames from the same dataset (defaults to all frames of ``clips``).
    """
    clips = np.asarray(clips)
    if clips.ndim != 5:
        raise ValueError(f"clips must be (B, F, H, W, C), got {clips.shape}")
    if extra_images < 0:
        raise ValueError("extra_images must be >= 0")
    b, f = clips.shape[:2]
    if extra_images == 0:
        return JointBatch(clips, f, labels)
    pool = clips.reshape(-1, *clips.shape[2:]) if frame_pool is None else np.asarray(frame_pool)
    if pool.shape[1:] != clips.shape[2:]:
        raise ValueError(f"frame pool shape {pool.shape[1:]} != clip frame shape {clips.shape[2:]}")
    rng = np.random.default_rng(rng)
    picks = pool[rng.integers(0, len(pool), size=(b, extra_images))]
    return JointBatch(np.concatenate([clips, picks], axis=1), f, labels)


class MovingShapesDataset:
    """A fixed pool of long moving-square videos; batches are pure functions of (seed, step)."""

    def __init__(
        self,
        seed: int = 0,
        num_videos: int = 64,
        video_length: int = 16,
        height: int = 32,
        width: int = 32,
        num_classes: int = 4,
        channels: int = 1,
        frames: int = 4,
        interval: int = 1,
        codec_factor: int = 2,
        hflip: bool = True,
        extra_images: int = 0,
        speed: float = 1.0,
    ):
        self.seed = seed
        self.frames = frames
        self.interval = interval
        self.codec_factor = codec_factor
        self.hflip = hflip
        self.extra_images = extra_images
        self.num_classes = num_classes
        if hflip and num_classes % 2:
            raise ValueError("flip augmentation needs an even number of direction classes")
        clips = [
            synth_moving_shapes(seed * 100003 + i, video_length, height, width, num_classes, channels=channels, speed=speed)
            for i in range(num_videos)
        ]
        self.videos = np.stack([c.pixels for c in clips])
        self.labels = np.array([c.class_label for c in clips])
        clip_sample(self.videos[0], interval, frames, 0)  # fail early if videos are too short

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        _, _, h, w, c = self.videos.shape
        f = self.codec_factor
        return (h // f, w // f, c * f * f)

    def batch(self, step: int, batch_size: int) -> JointBatch:
        rng = np.random.default_rng([self.seed, step])
        idx = rng.integers(0, len(self.videos), size=batch_size)
        clips, labels = [], self.labels[idx].copy()
        for j, i in enumerate(idx):
            clip = clip_sample(self.videos[i], self.interval, self.frames, rng)
            if self.hflip and rng.random() < 0.5:
                # mirroring reverses the horizontal motion: angle a -> pi - a
                clip = clip[:, :, ::-1]
                labels[j] = (self.num_classes // 2 - labels[j]) % self.num_classes
            clips.append(clip)
        pixels = np.stack(clips)
        pool = self.videos[rng.integers(0, len(self.videos), size=max(self.extra_images, 1) * batch_size)]
        pool = pool[np.arange(len(pool)), rng.integers(0, self.videos.shape[1], size=len(pool))]
        joint = build_joint_batch(pixels, self.extra_images, pool, rng, labels)
        joint.latents = codec_encode(joint.latents, self.codec_factor)
        return joint


def prefetch(produce: Callable[[int], object], steps: range, depth: int = 2) -> Iterator:
    """Run ``produce(step)`` on a worker thread, handing results over a bounded queue in order."""
    q: queue.Queue = queue.Queue(maxsize=max(depth, 1))
    stop = threading.Event()
    done = object()

    def worker():
        try:
            for s in steps:
                if stop.is_set():
                    return
                q.put((s, produce(s)))
        except BaseException as exc:  # surfaced on the consumer side
            q.put((None, exc))
            return
        q.put((None, done))

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    try:
        while True:
            step, item = q.get()
            if item is done:
                return
            if isinstance(item, BaseException):
                raise item
            yield step, item
    finally:
        stop.set()
        while thread.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                thread.join(timeout=0.01)


# ---------------------------------------------------------------- PGM / PPM frames


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(frame, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(frame: np.ndarray) -> np.ndarray:
    return frame.astype(np.float64) / 127.5 - 1.0


def write_pnm(path: str | os.PathLike, frame: np.ndarray) -> None:
    """Binary PGM for (H, W) / (H, W, 1) uint8, PPM for (H, W, 3)."""
    a = np.asarray(frame)
    if a.dtype != np.uint8:
        raise ValueError("PGM/PPM frames must be uint8")
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write frame of shape {a.shape} as PGM/PPM")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary 8-bit PGM (-> (H, W, 1)) or PPM (-> (H, W, 3))."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError(f"{path}: truncated header")
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM/PPM is supported")
    c = 1 if magic == b"P5" else 3
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * c, offset=pos)
    return data.reshape(h, w, c)


def load_frame_dir(directory: str | os.PathLike) -> np.ndarray:
    """Frames of a directory in lexicographic filename order, as (F, H, W, C) in [-1, 1]."""
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm/.ppm frames in {directory}")
    frames = [read_pnm(p) for p in paths]
    if len({f.shape for f in frames}) != 1:
        raise ValueError(f"frames in {directory} differ in shape")
    return from_uint8(np.stack(frames))


def save_frame_dir(directory: str | os.PathLike, clip: np.ndarray) -> list[Path]:
    """Write a (F, H, W, C) clip in [-1, 1] as numbered PGM/PPM files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    clip = np.asarray(clip)
    ext = ".pgm" if clip.shape[-1] == 1 else ".ppm"
    paths = []
    for i, frame in enumerate(clip):
        p = d / f"frame_{i:04d}{ext}"
        write_pnm(p, to_uint8(frame))
        paths.append(p)
    return paths
