"""Spatio-temporal focal modulation.

A query projection is multiplied elementwise by two modulators.  The
spatial modulator aggregates a ladder of per-frame depthwise convolutions
(plus a per-frame global mean); the temporal modulator aggregates a ladder
of per-location convolutions along T (plus a per-location mean over T).
Each ladder is mixed by learned per-position gates::

    y = q(x) * h_s(sum_l G_s[l] * Z_s[l]) * h_t(sum_l G_t[l] * Z_t[l])

Tensors are channels-last, ``(..., T, H, W, C)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .nn import Linear, Module, trunc_normal
from .tensor import Parameter, Tensor

SPATIAL = "spatial"
TEMPORAL = "temporal"

# Size guard for the nested-loop reference.
NAIVE_LIMITS = {"T": 4, "H": 6, "W": 6, "C": 8}


@dataclass
class GateMaps:
    G_s: Tensor
    G_t: Tensor


@dataclass
class Modulators:
    M_s: np.ndarray
    M_t: np.ndarray


class ChannelAffine(Module):
    """Per-channel ``w * x + b`` (the modulator maps h_s and h_t)."""

    def __init__(self, c: int, weight: float = 1.0, bias: float = 1.0, dtype=np.float32):
        self.weight = Parameter(np.full(c, weight, dtype=dtype))
        self.bias = Parameter(np.full(c, bias, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return tc.add(tc.mul(x, self.weight), self.bias)


class FocalModulation(Module):
    """Parameters of one spatio-temporal focal modulation layer.

    ``temporal_mode='pointwise'`` swaps the temporal conv ladder for
    literal 1x1 channel-mixing convs (no temporal receptive field).
    """

    def __init__(
        self,
        dim: int,
        focal_level: int = 2,
        focal_window: int = 3,
        rng: np.random.Generator | None = None,
        temporal_mode: str = TEMPORAL,
        out_proj: bool = True,
        dtype=np.float32,
    ):
        if focal_level < 1:
            raise ValueError(f"focal_level must be >= 1, got {focal_level}")
        if focal_window < 1 or focal_window % 2 == 0:
            raise ValueError(f"focal_window must be odd, got {focal_window}")
        if temporal_mode not in (TEMPORAL, "pointwise"):
            raise ValueError(f"unknown temporal_mode {temporal_mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.focal_level = focal_level
        self.focal_window = focal_window
        self.temporal_mode = temporal_mode
        gate_ch = dim + focal_level + 1
        self.query_proj = Linear(dim, dim, rng, dtype=dtype)
        self.spatial_proj = Linear(dim, gate_ch, rng, dtype=dtype)
        self.temporal_proj = Linear(dim, gate_ch, rng, dtype=dtype)
        self.level_kernels_s = []
        self.level_kernels_t = []
        for level in range(1, focal_level + 1):
            k = self.kernel_size(level)
            self.level_kernels_s.append(Parameter(trunc_normal(rng, (k, k, dim), dtype=dtype)))
            tshape = (dim, dim) if temporal_mode == "pointwise" else (k, dim)
            self.level_kernels_t.append(Parameter(trunc_normal(rng, tshape, dtype=dtype)))
        self.h_s = ChannelAffine(dim, dtype=dtype)
        self.h_t = ChannelAffine(dim, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, dtype=dtype) if out_proj else None
        self.capture = False
        self.last_modulators: Modulators | None = None

    def kernel_size(self, level: int) -> int:
        return self.focal_window + 2 * (level - 1)

    def __call__(self, x: Tensor) -> Tensor:
        return st_focal_modulation_forward(x, self)


def project_inputs(x: Tensor, p: FocalModulation):
    """Query, initial spatial/temporal contexts and both gate maps."""
    if x.shape[-1] != p.dim:
        raise ValueError(f"input has {x.shape[-1]} channels, layer expects {p.dim}")
    c, n = p.dim, p.focal_level + 1
    q = p.query_proj(x)
    fs = p.spatial_proj(x)
    ft = p.temporal_proj(x)
    zs0 = tc.slice_last(fs, 0, c)
    zt0 = tc.slice_last(ft, 0, c)
    gates = GateMaps(tc.slice_last(fs, c, c + n), tc.slice_last(ft, c, c + n))
    return q, zs0, zt0, gates


def contextualize(z0: Tensor, level_kernels, branch: str, focal_window: int | None = None,
                  pointwise: bool = False) -> list[Tensor]:
    """Hierarchical context ladder ``Z^l = GELU(conv_l(Z^{l-1}))``, l = 1..L."""
    if branch not in (SPATIAL, TEMPORAL):
        raise ValueError(f"branch must be 'spatial' or 'temporal', got {branch!r}")
    if len(level_kernels) < 1:
        raise ValueError("need at least one focal level")
    levels = []
    z = z0
    for idx, kern in enumerate(level_kernels):
        expect = None if focal_window is None else focal_window + 2 * idx
        if branch == SPATIAL:
            z = tc.depthwise_conv2d(z, kern, expect)
        elif pointwise:
            z = tc.linear(z, kern)
        else:
            z = tc.temporal_conv(z, kern, expect)
        z = tc.gelu(z)
        levels.append(z)
    return levels


def global_level(z_last: Tensor, branch: str) -> Tensor:
    """Global context level, broadcast back to the full ``(..., T, H, W, C)`` shape."""
    if branch == SPATIAL:
        pooled = tc.global_avg_pool(z_last, axes=(-3, -2), keepdims=True)
    elif branch == TEMPORAL:
        pooled = tc.global_avg_pool(z_last, axes=(-4,), keepdims=True)
    else:
        raise ValueError(f"branch must be 'spatial' or 'temporal', got {branch!r}")
    return tc.broadcast_to(pooled, z_last.shape)


def gated_aggregate(levels: list[Tensor], gates: Tensor) -> Tensor:
    """``sum_l gates[..., l] * levels[l]``; gates broadcast over channels."""
    if len(levels) != gates.shape[-1]:
        raise ValueError(f"{len(levels)} levels but {gates.shape[-1]} gate channels")
    out = None
    for i, z in enumerate(levels):
        term = tc.mul(tc.slice_last(gates, i, i + 1), z)
        out = term if out is None else tc.add(out, term)
    return out


def modulate(query: Tensor, zout_s: Tensor, zout_t: Tensor, p: FocalModulation,
             capture: bool = False) -> Tensor:
    if not (query.shape == zout_s.shape == zout_t.shape):
        raise ValueError(f"shape mismatch: query {query.shape}, spatial {zout_s.shape}, temporal {zout_t.shape}")
    m_s = p.h_s(zout_s)
    m_t = p.h_t(zout_t)
    if capture:
        p.last_modulators = Modulators(m_s.data.copy(), m_t.data.copy())
    y = tc.mul(tc.mul(query, m_s), m_t)
    return p.out_proj(y) if p.out_proj is not None else y


def st_focal_modulation_forward(x: Tensor, p: FocalModulation) -> Tensor:
    q, zs0, zt0, gates = project_inputs(x, p)
    zs = contextualize(zs0, p.level_kernels_s, SPATIAL, p.focal_window)
    zt = contextualize(zt0, p.level_kernels_t, TEMPORAL, p.focal_window,
                       pointwise=p.temporal_mode == "pointwise")
    zs.append(global_level(zs[-1], SPATIAL))
    zt.append(global_level(zt[-1], TEMPORAL))
    zout_s = gated_aggregate(zs, gates.G_s)
    zout_t = gated_aggregate(zt, gates.G_t)
    return modulate(q, zout_s, zout_t, p, capture=p.capture)


# ---------------------------------------------------------------------------
# nested-loop reference


def _gelu_scalar(v: float) -> float:
    return v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))


def reference_modulation_naive(x, p: FocalModulation) -> np.ndarray:
    """Same math as :func:`st_focal_modulation_forward` on a single
    ``(T, H, W, C)`` map, written as scalar loops in float64."""
    X = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"reference expects a (T, H, W, C) map, got {X.shape}")
    T, H, W, C = X.shape
    for name, val in zip("THWC", X.shape):
        if val > NAIVE_LIMITS[name]:
            raise ValueError(f"reference size guard: {name}={val} exceeds {NAIVE_LIMITS[name]}")
    if C != p.dim:
        raise ValueError(f"input has {C} channels, layer expects {p.dim}")
    L = p.focal_level
    xs = X.tolist()
    P = lambda t: np.asarray(t.data, dtype=np.float64).tolist()  # noqa: E731

    def project(lin):
        Wm, b = P(lin.weight), P(lin.bias)
        cout = len(b)
        res = [[[[0.0] * cout for _ in range(W)] for _ in range(H)] for _ in range(T)]
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    for o in range(cout):
                        acc = b[o]
                        for i in range(C):
                            acc += xs[t][h][w][i] * Wm[i][o]
                        res[t][h][w][o] = acc
        return res

    q = project(p.query_proj)
    fs = project(p.spatial_proj)
    ft = project(p.temporal_proj)

    def blank():
        return [[[[0.0] * C for _ in range(W)] for _ in range(H)] for _ in range(T)]

    def split(f):
        z = blank()
        g = [[[[0.0] * (L + 1) for _ in range(W)] for _ in range(H)] for _ in range(T)]
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    for c in range(C):
                        z[t][h][w][c] = f[t][h][w][c]
                    for l in range(L + 1):
                        g[t][h][w][l] = f[t][h][w][C + l]
        return z, g

    zs, gs = split(fs)
    zt, gt = split(ft)

    def spatial_level(z, kern):
        k = len(kern)
        r = k // 2
        out = blank()
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    for c in range(C):
                        acc = 0.0
                        for i in range(k):
                            for j in range(k):
                                hh, ww = h + i - r, w + j - r
                                if 0 <= hh < H and 0 <= ww < W:
                                    acc += z[t][hh][ww][c] * kern[i][j][c]
                        out[t][h][w][c] = _gelu_scalar(acc)
        return out

    def temporal_level(z, kern):
        out = blank()
        if p.temporal_mode == "pointwise":
            for t in range(T):
                for h in range(H):
                    for w in range(W):
                        for o in range(C):
                            acc = 0.0
                            for c in range(C):
                                acc += z[t][h][w][c] * kern[c][o]
                            out[t][h][w][o] = _gelu_scalar(acc)
            return out
        k = len(kern)
        r = k // 2
        for t in range(T):
            for h in range(H):
                for w in range(W):
                    for c in range(C):
                        acc = 0.0
                        for i in range(k):
                            tt = t + i - r
                            if 0 <= tt < T:
                                acc += z[tt][h][w][c] * kern[i][c]
                        out[t][h][w][c] = _gelu_scalar(acc)
        return out

    s_levels, t_levels = [], []
    for l in range(L):
        zs = spatial_level(zs, P(p.level_kernels_s[l]))
        s_levels.append(zs)
        zt = temporal_level(zt, P(p.level_kernels_t[l]))
        t_levels.append(zt)

    s_glob = blank()
    for t in range(T):
        for c in range(C):
            m = sum(zs[t][h][w][c] for h in range(H) for w in range(W)) / (H * W)
            for h in range(H):
                for w in range(W):
                    s_glob[t][h][w][c] = m
    t_glob = blank()
    for h in range(H):
        for w in range(W):
            for c in range(C):
                m = sum(zt[t][h][w][c] for t in range(T)) / T
                for t in range(T):
                    t_glob[t][h][w][c] = m
    s_levels.append(s_glob)
    t_levels.append(t_glob)

    hs_w, hs_b = P(p.h_s.weight), P(p.h_s.bias)
    ht_w, ht_b = P(p.h_t.weight), P(p.h_t.bias)
    y = blank()
    for t in range(T):
        for h in range(H):
            for w in range(W):
                for c in range(C):
                    agg_s = 0.0
                    agg_t = 0.0
                    for l in range(L + 1):
                        agg_s += gs[t][h][w][l] * s_levels[l][t][h][w][c]
                        agg_t += gt[t][h][w][l] * t_levels[l][t][h][w][c]
                    m_s = hs_w[c] * agg_s + hs_b[c]
                    m_t = ht_w[c] * agg_t + ht_b[c]
                    y[t][h][w][c] = q[t][h][w][c] * m_s * m_t
    if p.out_proj is None:
        return np.asarray(y)
    Wo, bo = P(p.out_proj.weight), P(p.out_proj.bias)
    out = np.zeros((T, H, W, C))
    for t in range(T):
        for h in range(H):
            for w in range(W):
                for o in range(C):
                    acc = bo[o]
                    for c in range(C):
                        acc += y[t][h][w][c] * Wo[c][o]
                    out[t, h, w, o] = acc
    return out
