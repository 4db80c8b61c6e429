"""Four-stage video focal-modulation network for teacher and student sizes."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .focal import TEMPORAL, FocalModulation
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor

PATCH_SIZES = (4, 2, 2, 2)
SPATIAL_STRIDE = int(np.prod(PATCH_SIZES))


@dataclass
class ModelConfig:
    embed_dim: int = 96
    depths: tuple[int, ...] = (1, 1, 2, 1)
    focal_levels: tuple[int, ...] = (2, 2, 2, 2)
    focal_windows: tuple[int, ...] = (3, 3, 3, 3)
    drop_path_rate: float = 0.2
    num_classes: int = 101
    mlp_ratio: float = 4.0
    in_chans: int = 3
    temporal_mode: str = TEMPORAL
    out_proj: bool = True

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.focal_levels = tuple(int(v) for v in self.focal_levels)
        self.focal_windows = tuple(int(v) for v in self.focal_windows)

    def validate(self) -> "ModelConfig":
        for name in ("depths", "focal_levels", "focal_windows"):
            if len(getattr(self, name)) != 4:
                raise ValueError(f"model.{name} must have 4 entries, got {getattr(self, name)}")
        if self.embed_dim < 1:
            raise ValueError(f"model.embed_dim must be >= 1, got {self.embed_dim}")
        if any(d < 0 for d in self.depths):
            raise ValueError(f"model.depths must be >= 0, got {self.depths}")
        if any(v < 1 for v in self.focal_levels):
            raise ValueError(f"model.focal_levels must be >= 1, got {self.focal_levels}")
        if any(v < 1 or v % 2 == 0 for v in self.focal_windows):
            raise ValueError(f"model.focal_windows must be odd, got {self.focal_windows}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"model.drop_path_rate must be in [0, 1), got {self.drop_path_rate}")
        if self.num_classes < 1:
            raise ValueError(f"model.num_classes must be >= 1, got {self.num_classes}")
        if self.mlp_ratio <= 0:
            raise ValueError(f"model.mlp_ratio must be > 0, got {self.mlp_ratio}")
        if self.temporal_mode not in (TEMPORAL, "pointwise"):
            raise ValueError(f"model.temporal_mode must be 'temporal' or 'pointwise', got {self.temporal_mode!r}")
        return self

    def stage_dims(self) -> list[int]:
        return [self.embed_dim * 2 ** i for i in range(4)]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("depths", "focal_levels", "focal_windows"):
            d[k] = list(d[k])
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def teacher_config(num_classes: int = 101) -> ModelConfig:
    return ModelConfig(embed_dim=128, depths=(2, 2, 18, 2), drop_path_rate=0.5, num_classes=num_classes)


def student_config(num_classes: int = 101) -> ModelConfig:
    return ModelConfig(embed_dim=96, depths=(1, 1, 2, 1), drop_path_rate=0.2, num_classes=num_classes)


PRESETS = {"teacher": teacher_config, "student": student_config}


def drop_path(x: Tensor, prob: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero the whole residual branch per sample with probability ``prob``;
    survivors are scaled by ``1/(1-prob)``.  Axis 0 is the sample axis."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"drop path probability must be in [0, 1], got {prob}")
    if not training or prob == 0.0:
        return x
    if prob == 1.0:
        return tc.scale(x, 0.0)
    if rng is None:
        raise ValueError("drop_path in training mode needs an rng")
    keep = rng.random(x.shape[0]) >= prob
    mask = (keep / (1.0 - prob)).astype(x.dtype).reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return tc.mul(x, Tensor(mask))


class PatchEmbed(Module):
    """Non-overlapping ``patch x patch`` projection applied per frame."""

    def __init__(self, patch: int, cin: int, cout: int, rng, dtype=np.float32):
        self.patch = patch
        self.cin = cin
        self.proj = Linear(patch * patch * cin, cout, rng, dtype=dtype)
        self.norm = LayerNorm(cout, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        *lead, t, h, w, c = x.shape
        p = self.patch
        if h % p or w % p:
            raise ValueError(f"spatial size {h}x{w} not divisible by patch {p}")
        base = len(lead)
        x = tc.reshape(x, (*lead, t, h // p, p, w // p, p, c))
        order = list(range(base)) + [base, base + 1, base + 3, base + 2, base + 4, base + 5]
        x = tc.transpose(x, order)
        x = tc.reshape(x, (*lead, t, h // p, w // p, p * p * c))
        return self.norm(self.proj(x))


class Block(Module):
    def __init__(self, dim: int, focal_level: int, focal_window: int, mlp_ratio: float,
                 drop_path_prob: float, rng, temporal_mode: str = TEMPORAL, out_proj: bool = True,
                 dtype=np.float32):
        hidden = int(dim * mlp_ratio)
        self.dim = dim
        self.drop_path_prob = drop_path_prob
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.modulation = FocalModulation(dim, focal_level, focal_window, rng,
                                          temporal_mode=temporal_mode, out_proj=out_proj, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        branch = self.modulation(self.norm1(x))
        x = tc.add(x, drop_path(branch, self.drop_path_prob, self.training, rng))
        branch = self.fc2(tc.gelu(self.fc1(self.norm2(x))))
        return tc.add(x, drop_path(branch, self.drop_path_prob, self.training, rng))


class Stage(Module):
    def __init__(self, embed: PatchEmbed, blocks: list[Block]):
        self.patch_embed = embed
        self.blocks = blocks


class VideoFocalNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        dims = cfg.stage_dims()
        total = sum(cfg.depths)
        rates = np.linspace(0.0, cfg.drop_path_rate, total) if total else np.zeros(0)
        self.stages = []
        idx = 0
        cin = cfg.in_chans
        for s in range(4):
            embed = PatchEmbed(PATCH_SIZES[s], cin, dims[s], rng, dtype=dtype)
            blocks = []
            for _ in range(cfg.depths[s]):
                blocks.append(Block(dims[s], cfg.focal_levels[s], cfg.focal_windows[s], cfg.mlp_ratio,
                                    float(rates[idx]), rng, cfg.temporal_mode, cfg.out_proj, dtype=dtype))
                idx += 1
            self.stages.append(Stage(embed, blocks))
            cin = dims[s]
        self.head_norm = LayerNorm(dims[-1], dtype=dtype)
        self.head = Linear(dims[-1], cfg.num_classes, rng, dtype=dtype)
        self.assign_names()

    @property
    def blocks(self) -> list[Block]:
        return [b for st in self.stages for b in st.blocks]

    def features(self, x: Tensor, rng=None) -> Tensor:
        for st in self.stages:
            x = st.patch_embed(x)
            for blk in st.blocks:
                x = blk(x, rng)
        return x

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        """Logits for a ``(T, H, W, 3)`` video or a ``(B, T, H, W, 3)`` batch."""
        x = tc.as_tensor(x)
        if x.ndim not in (4, 5):
            raise ValueError(f"expected (T,H,W,C) or (B,T,H,W,C) input, got {x.shape}")
        h, w = x.shape[-3], x.shape[-2]
        if h % SPATIAL_STRIDE or w % SPATIAL_STRIDE:
            raise ValueError(f"spatial size {h}x{w} must be divisible by {SPATIAL_STRIDE}")
        if x.shape[-1] != self.cfg.in_chans:
            raise ValueError(f"expected {self.cfg.in_chans} input channels, got {x.shape[-1]}")
        feats = self.features(x, rng)
        pooled = tc.global_avg_pool(self.head_norm(feats), axes=(-4, -3, -2))
        return self.head(pooled)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> VideoFocalNet:
    cfg.validate()
    return VideoFocalNet(cfg, np.random.default_rng(seed), dtype=dtype)


def forward(model: VideoFocalNet, video, rng=None) -> Tensor:
    return model(video, rng)


def param_count(model: VideoFocalNet) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def stage_shapes(cfg: ModelConfig, T: int, H: int, W: int) -> list[tuple[int, int, int, int]]:
    """Feature-map shape ``(T, H, W, C)`` at the output of each stage."""
    shapes = []
    h, w = H, W
    for s, c in enumerate(cfg.stage_dims()):
        h, w = h // PATCH_SIZES[s], w // PATCH_SIZES[s]
        shapes.append((T, h, w, c))
    return shapes


def _linear_flops(n: int, cin: int, cout: int, bias: bool = True) -> int:
    return 2 * n * cin * cout + (n * cout if bias else 0)


def block_flops(n: int, c: int, levels: int, window: int, mlp_ratio: float,
                temporal_mode: str = TEMPORAL, out_proj: bool = True) -> int:
    """Inference FLOPs of one block over ``n`` tokens of width ``c``."""
    nc = n * c
    hidden = int(c * mlp_ratio)
    f = 5 * nc  # norm1
    f += _linear_flops(n, c, c)  # query
    f += 2 * _linear_flops(n, c, c + levels + 1)  # fused context+gate projections
    for lvl in range(levels):
        k = window + 2 * lvl
        f += 2 * nc * k * k + nc
        f += (2 * nc * c if temporal_mode == "pointwise" else 2 * nc * k) + nc
    f += 2 * nc  # global means
    f += 2 * (2 * levels + 1) * nc  # gated sums
    f += 4 * nc  # h_s, h_t
    f += 2 * nc  # q * m_s * m_t
    if out_proj:
        f += _linear_flops(n, c, c)
    f += nc  # residual
    f += 5 * nc  # norm2
    f += _linear_flops(n, c, hidden) + n * hidden + _linear_flops(n, hidden, c)
    f += nc  # residual
    return f


def flop_count(model_or_cfg, T: int, H: int, W: int) -> int:
    """Analytic inference FLOPs (two per multiply-accumulate) for one video."""
    cfg = model_or_cfg.cfg if isinstance(model_or_cfg, VideoFocalNet) else model_or_cfg
    if H % SPATIAL_STRIDE or W % SPATIAL_STRIDE:
        raise ValueError(f"spatial size {H}x{W} must be divisible by {SPATIAL_STRIDE}")
    total = 0
    cin = cfg.in_chans
    for s, (t, h, w, c) in enumerate(stage_shapes(cfg, T, H, W)):
        n = t * h * w
        p = PATCH_SIZES[s]
        total += _linear_flops(n, p * p * cin, c) + 5 * n * c
        for _ in range(cfg.depths[s]):
            total += block_flops(n, c, cfg.focal_levels[s], cfg.focal_windows[s], cfg.mlp_ratio,
                                 cfg.temporal_mode, cfg.out_proj)
        cin = c
    t, h, w, c = stage_shapes(cfg, T, H, W)[-1]
    n = t * h * w
    total += 5 * n * c + n * c + _linear_flops(1, c, cfg.num_classes)
    return total
