"""Response-based distillation objective.

``total = alpha * kd + (1 - alpha) * ce`` where ``kd`` is the forward KL
from the temperature-softened teacher distribution to the softened student
distribution, rescaled by ``tau**2``.  Batched inputs (``(B, K)`` logits)
are reduced by the batch mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor

Q_FLOOR = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.3
    tau: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"distill.alpha must be in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"distill.tau must be > 0, got {self.tau}")


@dataclass
class LossBreakdown:
    kd: Tensor
    ce: Tensor
    total: Tensor

    def values(self) -> tuple[float, float, float]:
        return float(self.kd.data), float(self.ce.data), float(self.total.data)


def soften(logits, tau: float) -> Tensor:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    return tc.softmax(tc.scale(tc.as_tensor(logits), 1.0 / tau), axis=-1)


def kl_divergence(p, q) -> Tensor:
    """``sum_i p_i log(p_i / q_i)`` over the last axis, batch-averaged.

    ``p`` is treated as a fixed target (no gradient); ``q`` is floored at
    1e-12 inside the log.  Terms with ``p_i == 0`` contribute zero.
    """
    p, q = tc.as_tensor(p), tc.as_tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    pd = p.data
    # per-term difference so that p == q cancels exactly
    log_p = np.log(np.maximum(pd, Q_FLOOR)).astype(q.dtype)
    gap = tc.sub(Tensor(log_p), tc.log(q, Q_FLOOR))
    kl = tc.sum_all(tc.mul(Tensor(pd.astype(q.dtype)), gap))
    n = int(np.prod(pd.shape[:-1])) if pd.ndim > 1 else 1
    return tc.scale(kl, 1.0 / n) if n > 1 else kl


def _check_pair(teacher: Tensor, student: Tensor) -> None:
    if teacher.shape[-1] != student.shape[-1]:
        raise ValueError(f"class count mismatch: teacher {teacher.shape[-1]}, student {student.shape[-1]}")
    if teacher.shape != student.shape:
        raise ValueError(f"logit shapes differ: teacher {teacher.shape}, student {student.shape}")


def kd_loss(teacher_logits, student_logits, cfg: DistillConfig) -> Tensor:
    teacher = tc.as_tensor(teacher_logits).detach()
    student = tc.as_tensor(student_logits)
    _check_pair(teacher, student)
    p = soften(teacher, cfg.tau)
    q = soften(student, cfg.tau)
    return tc.scale(kl_divergence(p, q), cfg.tau ** 2)


def ce_loss(label, student_logits) -> Tensor:
    """Cross-entropy via log-sum-exp; ``label`` is an int or an int array."""
    logits = tc.as_tensor(student_logits)
    labels = np.asarray(label, dtype=np.int64)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes: {labels.tolist()}")
    picked = tc.gather_last(tc.log_softmax(logits, axis=-1), labels)
    if picked.ndim == 0:
        return tc.scale(picked, -1.0)
    return tc.scale(tc.mean_all(picked), -1.0)


def total_loss(teacher_logits, student_logits, label, cfg: DistillConfig) -> LossBreakdown:
    kd = kd_loss(teacher_logits, student_logits, cfg)
    ce = ce_loss(label, student_logits)
    if cfg.alpha == 0.0:
        total = tc.scale(ce, 1.0)
    elif cfg.alpha == 1.0:
        total = tc.scale(kd, 1.0)
    else:
        total = tc.add(tc.scale(kd, cfg.alpha), tc.scale(ce, 1.0 - cfg.alpha))
    return LossBreakdown(kd, ce, total)


def entropy(p) -> float:
    pd = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    return float(-(np.where(pd > 0, pd * np.log(np.where(pd > 0, pd, 1.0)), 0.0)).sum())
