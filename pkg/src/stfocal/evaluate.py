"""Accuracy metrics, multi-view inference and modulator heatmap export."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import SamplingSpec, VideoSample, multi_crop_views, sample_frames, spatial_crop


@dataclass
class EvalReport:
    top1: float
    top5: float
    per_class_top1: np.ndarray
    n_samples: int
    views_per_sample: int

    def csv_row(self) -> list[str]:
        """Row aligned with the training metrics header (non-eval columns blank)."""
        return ["", "", "", "", "", "", repr(self.top1), repr(self.top5)]


def top_k_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` largest scores.
    Ties rank the lower class index first."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"expected (N, K) scores and N labels, got {logits.shape} and {labels.shape}")
    n, n_cls = logits.shape
    if not 1 <= k <= n_cls:
        raise ValueError(f"k={k} out of range for {n_cls} classes")
    if n == 0:
        raise ValueError("no samples")
    own = logits[np.arange(n), labels][:, None]
    cls = np.arange(n_cls)[None, :]
    rank = (logits > own).sum(axis=1) + ((logits == own) & (cls < labels[:, None])).sum(axis=1)
    # a non-finite score for the true class is never a hit
    return float(((rank < k) & np.isfinite(own[:, 0])).mean())


def _softmax(z: np.ndarray) -> np.ndarray:
    return tc.softmax(tc.as_tensor(z), axis=-1).data


def _predict(model, clip: np.ndarray) -> np.ndarray:
    return _softmax(model(clip[None]).data)[0]


def multi_view_inference(model, video: np.ndarray, n_clips: int, n_crops: int, spec: SamplingSpec,
                         size: int = 32) -> np.ndarray:
    """Mean of the per-view softmax distributions, views reduced in index order."""
    was_training = model.training
    model.eval()
    try:
        views = multi_crop_views(video, n_clips, n_crops, spec, size)
        probs = [_predict(model, v) for v in views]
    finally:
        model.train(was_training)
    # float64 accumulation: n identical views average back to the exact view
    return np.mean(np.stack(probs).astype(np.float64), axis=0).astype(probs[0].dtype)


def evaluate(model, samples: list[VideoSample], spec: SamplingSpec, size: int = 32,
             views: tuple[int, int] = (1, 1), batch_size: int = 16) -> EvalReport:
    if not samples:
        raise ValueError("cannot evaluate an empty sample list")
    eval_spec = SamplingSpec(spec.T, spec.stride, "eval")
    labels = np.array([s.label for s in samples], dtype=np.int64)
    was_training = model.training
    model.eval()
    try:
        if tuple(views) == (1, 1):
            chunks = []
            for i in range(0, len(samples), batch_size):
                clips = [spatial_crop(sample_frames(s.frames, eval_spec), "eval", size=size)
                         for s in samples[i:i + batch_size]]
                chunks.append(_softmax(model(np.stack(clips)).data))
            probs = np.concatenate(chunks)
        else:
            probs = np.stack([multi_view_inference(model, s.frames, views[0], views[1], eval_spec, size)
                              for s in samples])
    finally:
        model.train(was_training)
    n_cls = probs.shape[1]
    hit = np.argmax(probs, axis=1) == labels
    per_class = np.array([hit[labels == c].mean() if (labels == c).any() else np.nan for c in range(n_cls)])
    return EvalReport(
        top1=top_k_accuracy(probs, labels, 1),
        top5=top_k_accuracy(probs, labels, min(5, n_cls)),
        per_class_top1=per_class,
        n_samples=len(samples),
        views_per_sample=int(views[0] * views[1]),
    )


# ---------------------------------------------------------------------------
# heatmaps


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    data = blob[m.end():]
    if len(data) != w * h:
        raise ValueError(f"PGM payload {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a flat map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo < 1e-12:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)


def resolve_block(model, selector: str):
    """``"s.b"`` or ``"stages.s.blocks.b"`` -> that block."""
    m = re.fullmatch(r"(?:stages\.)?(\d+)\.(?:blocks\.)?(\d+)", selector.strip())
    if not m:
        raise ValueError(f"bad layer selector {selector!r}; use 'stage.block', e.g. '0.0'")
    s, b = int(m.group(1)), int(m.group(2))
    if s >= len(model.stages) or b >= len(model.stages[s].blocks):
        raise ValueError(f"layer selector {selector!r} names no block in this model")
    return model.stages[s].blocks[b]


def modulator_maps(model, clip: np.ndarray, selector: str) -> tuple[np.ndarray, np.ndarray]:
    """Channel L2 norms of ``M_s`` and ``M_t`` at the selected block, each ``(T, h, w)``."""
    block = resolve_block(model, selector)
    mod = block.modulation
    was_training = model.training
    model.eval()
    mod.capture = True
    try:
        model(clip[None])
        caught = mod.last_modulators
    finally:
        mod.capture = False
        mod.last_modulators = None
        model.train(was_training)
    m_s = np.sqrt((caught.M_s.astype(np.float64) ** 2).sum(axis=-1))[0]
    m_t = np.sqrt((caught.M_t.astype(np.float64) ** 2).sum(axis=-1))[0]
    return m_s, m_t


def export_modulator_maps(model, video: np.ndarray, selector: str, path, spec: SamplingSpec | None = None,
                          size: int = 32) -> dict:
    """Write ``spatial_tNN.pgm`` (one ``h x w`` map per frame) and
    ``temporal.pgm`` (``T`` rows, one column per location) under ``path``."""
    spec = SamplingSpec(spec.T if spec else 8, spec.stride if spec else None, "eval")
    clip = spatial_crop(sample_frames(video, spec), "eval", size=size)
    m_s, m_t = modulator_maps(model, clip, selector)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create heatmap directory {out}: {exc}") from exc
    files = []
    for t in range(m_s.shape[0]):
        f = out / f"spatial_t{t:02d}.pgm"
        write_pgm(f, normalize_map(m_s[t]))
        files.append(f)
    strip = m_t.reshape(m_t.shape[0], -1)
    f = out / "temporal.pgm"
    write_pgm(f, normalize_map(strip))
    files.append(f)
    return {"spatial": m_s, "temporal": m_t, "files": files}
