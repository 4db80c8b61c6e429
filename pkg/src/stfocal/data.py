"""Synthetic motion videos, the ``.vtr`` tensor format, and clip sampling.

Each video shows one sprite (a rotated rectangle) on a static noisy
background.  The class is the motion program applied over time, and the
first frame has the same distribution for every class.  Layout is
``(T, H, W, 3)`` float32 in [0, 1].
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VTR_MAGIC = b"VTSR"
VTR_VERSION = 1
_VTR_HEADER = struct.Struct("<4sIIIIII")
_MAX_ELEMENTS = 1 << 31

PROGRAMS = (
    "translate_left", "translate_right", "translate_up", "translate_down",
    "rotate", "grow", "shrink", "blink",
)
EXTRA_PROGRAMS = ("static",)


class VideoFormatError(ValueError):
    pass


@dataclass
class VideoSample:
    frames: np.ndarray
    label: int
    id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T, H, W, C) with T >= 1, got {self.frames.shape}")


@dataclass
class SamplingSpec:
    T: int = 8
    stride: int | None = None
    mode: str = "train"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"sampling.frames must be >= 1, got {self.T}")
        if self.stride is not None and self.stride < 1:
            raise ValueError(f"sampling.stride must be >= 1, got {self.stride}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"sampling mode must be 'train' or 'eval', got {self.mode!r}")

    def stride_for(self, t_raw: int) -> int:
        return self.stride if self.stride is not None else max(1, t_raw // self.T)


@dataclass
class SyntheticSpec:
    classes: tuple[str, ...] = PROGRAMS
    samples_per_class: int = 50
    height: int = 32
    width: int = 32
    frames: int = 16
    noise: float = 0.08
    seed: int = 0
    train_fraction: float = 0.7

    def validate(self) -> "SyntheticSpec":
        known = PROGRAMS + EXTRA_PROGRAMS
        if len(self.classes) < 2:
            raise ValueError("data.classes needs at least 2 motion programs")
        bad = [c for c in self.classes if c not in known]
        if bad:
            raise ValueError(f"data.classes has unknown programs {bad}; known: {list(known)}")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("data.classes has duplicates")
        if self.samples_per_class < 2:
            raise ValueError("data.samples_per_class must be >= 2")
        if min(self.height, self.width) < 8 or self.frames < 3:
            raise ValueError("data canvas must be >= 8x8 with >= 3 frames")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("data.train_fraction must be in (0, 1)")
        return self


# ---------------------------------------------------------------------------
# rendering


def render_video(program: str, rng: np.random.Generator, height: int, width: int, frames: int,
                 noise: float) -> tuple[np.ndarray, np.ndarray]:
    """Render one video.  Returns ``(frames, boxes)``; ``boxes[t]`` is the
    sprite's ``(y0, x0, y1, x1)`` pixel box (inclusive-exclusive) or -1s if
    the sprite is hidden in that frame."""
    base = rng.uniform(0.0, 0.35, size=3)
    background = np.clip(base + noise * rng.standard_normal((height, width, 3)), 0.0, 1.0)
    color = rng.uniform(0.6, 1.0, size=3)
    scale = min(height, width)
    cy = rng.uniform(0.3, 0.7) * height
    cx = rng.uniform(0.3, 0.7) * width
    size0 = rng.uniform(0.16, 0.26) * scale
    aspect = rng.uniform(1.8, 2.4)
    theta0 = rng.uniform(0.0, math.pi)
    speed = rng.uniform(0.7, 1.0) * scale / 32.0
    spin = rng.choice([-1.0, 1.0]) * rng.uniform(0.18, 0.3)
    rate = math.log(2.0) / max(frames - 1, 1)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    video = np.empty((frames, height, width, 3), dtype=np.float32)
    boxes = np.full((frames, 4), -1, dtype=np.int32)
    for t in range(frames):
        y, x, size, theta, visible = cy, cx, size0, theta0, True
        if program == "translate_left":
            x = cx - speed * t
        elif program == "translate_right":
            x = cx + speed * t
        elif program == "translate_up":
            y = cy - speed * t
        elif program == "translate_down":
            y = cy + speed * t
        elif program == "rotate":
            theta = theta0 + spin * t
        elif program == "grow":
            size = size0 * math.exp(rate * t)
        elif program == "shrink":
            size = size0 * math.exp(-rate * t)
        elif program == "blink":
            visible = t % 2 == 0
        elif program != "static":
            raise ValueError(f"unknown motion program {program!r}")
        frame = background.copy()
        if visible:
            c, s = math.cos(theta), math.sin(theta)
            u = (xx - x) * c + (yy - y) * s
            v = -(xx - x) * s + (yy - y) * c
            mask = (np.abs(u) <= aspect * size / 2) & (np.abs(v) <= size / 2)
            frame[mask] = color
            if mask.any():
                rows = np.flatnonzero(mask.any(axis=1))
                cols = np.flatnonzero(mask.any(axis=0))
                boxes[t] = (rows[0], cols[0], rows[-1] + 1, cols[-1] + 1)
        video[t] = frame
    return video, boxes


def _sample_rng(seed: int, cls: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, cls, idx])


def synthetic_video(spec: SyntheticSpec, cls: int, idx: int) -> tuple[np.ndarray, np.ndarray]:
    """Regenerate sample ``idx`` of class ``cls`` (frames and sprite boxes)."""
    return render_video(spec.classes[cls], _sample_rng(spec.seed, cls, idx),
                        spec.height, spec.width, spec.frames, spec.noise)


@dataclass
class IndexEntry:
    id: str
    path: str
    label: int
    split: str


def generate_synthetic(spec: SyntheticSpec, root) -> list[IndexEntry]:
    """Write one ``.vtr`` per sample under ``root/videos`` plus ``root/index.tsv``."""
    spec.validate()
    root = Path(root)
    try:
        (root / "videos").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    n_train = int(round(spec.train_fraction * spec.samples_per_class))
    entries = []
    for cls, name in enumerate(spec.classes):
        order = np.random.default_rng([spec.seed, 7919, cls]).permutation(spec.samples_per_class)
        train_ids = set(order[:n_train].tolist())
        for idx in range(spec.samples_per_class):
            frames, _ = synthetic_video(spec, cls, idx)
            sid = f"{name}_{idx:04d}"
            rel = f"videos/{sid}.vtr"
            encode_vtr(VideoSample(frames, cls, sid), root / rel)
            entries.append(IndexEntry(sid, rel, cls, "train" if idx in train_ids else "val"))
    write_index(entries, root / "index.tsv")
    return entries


def write_index(entries: list[IndexEntry], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(f"{e.id}\t{e.path}\t{e.label}\t{e.split}\n")


def read_index(root) -> list[IndexEntry]:
    path = Path(root) / "index.tsv"
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise VideoFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            entries.append(IndexEntry(parts[0], parts[1], int(parts[2]), parts[3]))
    return entries


def load_split(root, split: str | None = None) -> list[VideoSample]:
    root = Path(root)
    return [decode_vtr(root / e.path) for e in read_index(root) if split is None or e.split == split]


@dataclass
class Corpus:
    train: list[VideoSample]
    val: list[VideoSample]
    num_classes: int


def load_corpus(root) -> Corpus:
    root = Path(root)
    entries = read_index(root)
    if not entries:
        raise VideoFormatError(f"empty index at {root / 'index.tsv'}")
    train, val = [], []
    for e in entries:
        sample = decode_vtr(root / e.path)
        sample.id = e.id
        (train if e.split == "train" else val).append(sample)
    return Corpus(train, val, max(e.label for e in entries) + 1)


# ---------------------------------------------------------------------------
# .vtr codec


def encode_vtr(sample: VideoSample, path) -> None:
    frames = np.ascontiguousarray(sample.frames, dtype="<f4")
    t, h, w, c = frames.shape
    header = _VTR_HEADER.pack(VTR_MAGIC, VTR_VERSION, t, h, w, c, int(sample.label))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())
    os.replace(tmp, path)


def decode_vtr_bytes(blob: bytes, sid: str = "") -> VideoSample:
    if len(blob) < _VTR_HEADER.size:
        raise VideoFormatError("truncated .vtr header")
    magic, version, t, h, w, c, label = _VTR_HEADER.unpack_from(blob)
    if magic != VTR_MAGIC:
        raise VideoFormatError(f"bad .vtr magic {magic!r}")
    if version != VTR_VERSION:
        raise VideoFormatError(f"unsupported .vtr version {version}")
    if min(t, h, w, c) < 1:
        raise VideoFormatError(f"invalid .vtr dims {(t, h, w, c)}")
    n = t * h * w * c
    if n >= _MAX_ELEMENTS:
        raise VideoFormatError(f".vtr dims {(t, h, w, c)} overflow the element limit")
    payload = len(blob) - _VTR_HEADER.size
    if payload != 4 * n:
        raise VideoFormatError(f".vtr payload is {payload} bytes, header implies {4 * n}")
    frames = np.frombuffer(blob, dtype="<f4", offset=_VTR_HEADER.size).reshape(t, h, w, c)
    return VideoSample(frames.astype(np.float32), int(label), sid)


def decode_vtr(path) -> VideoSample:
    path = Path(path)
    return decode_vtr_bytes(path.read_bytes(), path.stem)


# ---------------------------------------------------------------------------
# temporal sampling


def clip_indices(t_raw: int, spec: SamplingSpec, rng: np.random.Generator | None = None,
                 start: int | None = None) -> np.ndarray:
    """Frame indices for one clip; indices past the end repeat the last frame."""
    if t_raw < 1:
        raise ValueError("video has no frames")
    stride = spec.stride_for(t_raw)
    if start is None:
        if spec.mode == "train":
            hi = t_raw - (spec.T - 1) * stride
            start = int(rng.integers(0, hi)) if hi > 1 else 0
        else:
            start = max(t_raw - spec.T * stride, 0) // 2
    idx = start + stride * np.arange(spec.T)
    return np.minimum(idx, t_raw - 1)


def sample_frames(video: np.ndarray, spec: SamplingSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    return video[clip_indices(video.shape[0], spec, rng)]


def uniform_clip_starts(t_raw: int, spec: SamplingSpec, n_clips: int) -> list[int]:
    """``n_clips`` evenly spread starts; ``n_clips == 1`` is the centred eval start."""
    room = max(t_raw - spec.T * spec.stride_for(t_raw), 0)
    return [((2 * i + 1) * room) // (2 * n_clips) for i in range(n_clips)]


# ---------------------------------------------------------------------------
# spatial transforms


def _interp_matrix(n_in: int, n_out: int, offset: float = 0.0, extent: float | None = None) -> np.ndarray:
    """Rows of bilinear weights mapping ``n_in`` samples to ``n_out``
    (half-pixel centres, edge clamped).  ``offset``/``extent`` select a
    sub-window of the input in pixel units."""
    extent = float(n_in) if extent is None else extent
    pos = offset + (np.arange(n_out) + 0.5) * (extent / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize_window(frames: np.ndarray, top: float, left: float, height: float, width: float,
                  out_h: int, out_w: int) -> np.ndarray:
    ry = _interp_matrix(frames.shape[1], out_h, top, height)
    rx = _interp_matrix(frames.shape[2], out_w, left, width)
    out = np.einsum("oh,thwc->towc", ry, frames, optimize=True)
    out = np.einsum("pw,towc->topc", rx, out, optimize=True)
    return out.astype(np.float32)


def random_resized_window(h: int, w: int, rng: np.random.Generator,
                          scale=(0.08, 1.0), ratio=(3 / 4, 4 / 3)) -> tuple[int, int, int, int]:
    area = h * w
    log_r = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(*log_r))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side, side


def _short_side_resize(frames: np.ndarray, size: int) -> np.ndarray:
    h, w = frames.shape[1:3]
    if min(h, w) == size:
        return frames
    if h <= w:
        nh, nw = size, max(size, int(round(w * size / h)))
    else:
        nh, nw = max(size, int(round(h * size / w))), size
    return resize_window(frames, 0.0, 0.0, h, w, nh, nw)


def spatial_crop(frames: np.ndarray, mode: str, rng: np.random.Generator | None = None,
                 size: int = 32, window: tuple[int, int, int, int] | None = None,
                 scale: tuple[float, float] = (0.08, 1.0)) -> np.ndarray:
    """Train: random-resized crop; eval: short-side resize and centre crop.
    The same window is used for every frame of the clip."""
    h, w = frames.shape[1:3]
    if h <= 1 or w <= 1:
        raise ValueError(f"degenerate source of size {h}x{w}")
    if mode == "train":
        top, left, ch, cw = window if window is not None else random_resized_window(h, w, rng, scale)
        return resize_window(frames, top, left, ch, cw, size, size)
    if mode != "eval":
        raise ValueError(f"crop mode must be 'train' or 'eval', got {mode!r}")
    return _crop_along_long_side(_short_side_resize(frames, size), size, 1)[0]


def _crop_along_long_side(frames: np.ndarray, size: int, n_crops: int) -> list[np.ndarray]:
    h, w = frames.shape[1:3]
    room_y, room_x = h - size, w - size
    if n_crops == 1:
        offsets = [0.5]
    else:
        offsets = [i / (n_crops - 1) for i in range(n_crops)]
    out = []
    for f in offsets:
        if room_x >= room_y:
            top, left = room_y // 2, int(round(f * room_x))
        else:
            top, left = int(round(f * room_y)), room_x // 2
        out.append(np.ascontiguousarray(frames[:, top:top + size, left:left + size]))
    return out


def multi_crop_views(video: np.ndarray, n_clips: int, n_crops: int, spec: SamplingSpec,
                     size: int = 32) -> list[np.ndarray]:
    """``n_clips`` uniform temporal clips x ``n_crops`` crops along the longer side."""
    if n_clips < 1 or n_crops < 1:
        raise ValueError("n_clips and n_crops must be >= 1")
    eval_spec = SamplingSpec(spec.T, spec.stride, "eval")
    views = []
    for start in uniform_clip_starts(video.shape[0], eval_spec, n_clips):
        clip = video[clip_indices(video.shape[0], eval_spec, start=start)]
        if min(clip.shape[1:3]) <= 1:
            raise ValueError(f"degenerate source of size {clip.shape[1]}x{clip.shape[2]}")
        views.extend(_crop_along_long_side(_short_side_resize(clip, size), size, n_crops))
    return views


def make_batch(samples: list[VideoSample], spec: SamplingSpec, size: int,
               rng: np.random.Generator | None,
               scale: tuple[float, float] = (0.08, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Stack sampled and cropped clips into ``(B, T, size, size, C)``.

    In train mode each clip draws its start index, then its crop window,
    from ``rng`` in sample order."""
    clips = []
    for s in samples:
        clip = sample_frames(s.frames, spec, rng)
        clips.append(spatial_crop(clip, spec.mode, rng, size, scale=scale))
    return np.stack(clips).astype(np.float32), np.array([s.label for s in samples], dtype=np.int64)
