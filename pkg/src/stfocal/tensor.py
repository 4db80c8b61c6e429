"""Dense numpy tensors with tape-based reverse-mode differentiation.

Only the operators needed by the focal-modulation network are provided.
Every op works on arbitrary leading (batch) dimensions; spatio-temporal
tensors use channels-last layout ``(..., T, H, W, C)``.

Recording happens only while a :class:`GradTape` is active *and* at least
one input has ``requires_grad``.  Outside a tape the ops are plain numpy.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_local = threading.local()

# When set, every op output is checked for non-finite values.
DEBUG = False

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented


class Parameter(Tensor):
    """A named leaf tensor owned by a model.  ``requires_grad`` doubles as
    the trainable flag: frozen parameters never receive gradients."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float32))


@dataclass(eq=False)
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class GradTape:
    """Ordered record of executed ops.  Use as a context manager::

        with GradTape() as tape:
            loss = f(params)
        grads = backward(loss, tape)
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "GradTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()


def _tape_stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class FlopCounter:
    """Accumulates FLOPs reported by ops executed while it is active.

    Multiply-accumulates count as two FLOPs; elementwise ops count one per
    output element; layer_norm counts five per element.  Shape-only ops are
    free.
    """

    def __init__(self):
        self.total = 0

    def __enter__(self) -> "FlopCounter":
        if not hasattr(_local, "counters"):
            _local.counters = []
        _local.counters.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.counters.pop()


def _count(n: int) -> None:
    for c in getattr(_local, "counters", ()):
        c.total += int(n)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, flops: int = 0) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor(data)
    if flops:
        _count(flops)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: GradTape) -> dict[str, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Sets ``.grad`` on every reachable leaf that requires grad and returns a
    ``{name: grad}`` map for the reached named Parameters.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.out) for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    named = {}
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False)
        leaf.grad = g
        if isinstance(leaf, Parameter):
            named[leaf.name] = g
    return named


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, out.size)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, out.size)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, b)
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, out.size)


def scale(x: Tensor, s: float) -> Tensor:
    out = x.data * x.data.dtype.type(s)
    return _make(out, (x,), lambda g: (g * s,), out.size)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the normal CDF written through erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _make(out, (x,), bw, out.size)


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; no gradient flows where clamped."""
    xd = x.data
    clipped = np.maximum(xd, floor) if floor > 0 else xd
    out = np.log(clipped)

    def bw(g):
        gx = g / clipped
        if floor > 0:
            gx = np.where(xd > floor, gx, 0.0).astype(xd.dtype, copy=False)
        return (gx,)

    return _make(out, (x,), bw, out.size)


# ---------------------------------------------------------------------------
# reductions and normalisation


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, 3 * y.size)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), bw, 3 * y.size)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last (channel) axis, then apply ``gamma*x + beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match channels {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, c).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw, 5 * out.size)


def global_avg_pool(x: Tensor, axes: Sequence[int], keepdims: bool = False) -> Tensor:
    nd = x.ndim
    norm = tuple(sorted(a % nd for a in axes))
    if len(set(norm)) != len(norm):
        raise ValueError(f"pool axes must be distinct, got {tuple(axes)}")
    count = int(np.prod([x.shape[a] for a in norm]))
    out = x.data.mean(axis=norm, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, norm)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype, copy=True),)

    return _make(out, (x,), bw, x.data.size)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _make(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), x.data.size)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return _make(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), n)


# ---------------------------------------------------------------------------
# shape ops (free in FLOP accounting)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, (x,), lambda g: (g.transpose(inv),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = np.ascontiguousarray(np.broadcast_to(x.data, tuple(shape)))
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out = np.ascontiguousarray(x.data[..., start:stop])

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _make(out, (x,), bw)


def gather_last(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``x[..., index]`` per leading position (e.g. logits at labels)."""
    index = np.asarray(index, dtype=np.int64)
    out = np.take_along_axis(x.data, index[..., None], axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, index[..., None], g[..., None], axis=-1)
        return (full,)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# linear maps and convolutions


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W + b`` over the last axis; ``W`` has shape ``(C_in, C_out)``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}")
    cin, cout = weight.shape
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    x2 = x.data.reshape(-1, cin)
    y = x2 @ weight.data
    if bias is not None:
        y += bias.data
    out = y.reshape(x.shape[:-1] + (cout,))
    m = x2.shape[0]
    flops = 2 * m * cin * cout + (m * cout if bias is not None else 0)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, bw, flops)


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {k}")


def depthwise_conv2d(x: Tensor, kernels: Tensor, kernel_size: int | None = None) -> Tensor:
    """Per-channel ``k x k`` convolution over (H, W) with zero 'same' padding.

    ``x``: ``(..., H, W, C)``; ``kernels``: ``(k, k, C)``.  Leading axes
    (frames, batch) are independent.
    """
    k = kernels.shape[0]
    if kernel_size is not None and kernel_size != k:
        raise ValueError(f"kernel_size {kernel_size} does not match kernels of shape {kernels.shape}")
    _check_kernel(k)
    if kernels.shape != (k, k, x.shape[-1]):
        raise ValueError(f"depthwise kernels {kernels.shape} do not match input channels {x.shape[-1]}")
    h, w, c = x.shape[-3:]
    r = k // 2
    pad = [(0, 0)] * (x.ndim - 3) + [(r, r), (r, r), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = kernels.data
    out = np.zeros_like(x.data)
    for i in range(k):
        for j in range(k):
            out += xp[..., i:i + h, j:j + w, :] * kd[i, j]

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gp[..., i:i + h, j:j + w, :] += g * kd[i, j]
            gx = gp[..., r:r + h, r:r + w, :]
        if kernels.requires_grad:
            gk = np.empty_like(kd)
            for i in range(k):
                for j in range(k):
                    gk[i, j] = (xp[..., i:i + h, j:j + w, :] * g).reshape(-1, c).sum(axis=0)
        return gx, gk

    return _make(out, (x, kernels), bw, 2 * out.size * k * k)


def temporal_conv(x: Tensor, kernels: Tensor, kernel_size: int | None = None) -> Tensor:
    """Per-channel 1-D convolution along T with zero 'same' padding.

    ``x``: ``(..., T, H, W, C)``; ``kernels``: ``(k, C)``.
    """
    k = kernels.shape[0]
    if kernel_size is not None and kernel_size != k:
        raise ValueError(f"kernel_size {kernel_size} does not match kernels of shape {kernels.shape}")
    _check_kernel(k)
    if kernels.shape != (k, x.shape[-1]):
        raise ValueError(f"temporal kernels {kernels.shape} do not match input channels {x.shape[-1]}")
    t, c = x.shape[-4], x.shape[-1]
    r = k // 2
    pad = [(0, 0)] * (x.ndim - 4) + [(r, r), (0, 0), (0, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = kernels.data
    out = np.zeros_like(x.data)
    for i in range(k):
        out += xp[..., i:i + t, :, :, :] * kd[i]

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(k):
                gp[..., i:i + t, :, :, :] += g * kd[i]
            gx = gp[..., r:r + t, :, :, :]
        if kernels.requires_grad:
            gk = np.empty_like(kd)
            for i in range(k):
                gk[i] = (xp[..., i:i + t, :, :, :] * g).reshape(-1, c).sum(axis=0)
        return gx, gk

    return _make(out, (x, kernels), bw, 2 * out.size * k)
