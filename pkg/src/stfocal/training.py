"""SGD with warmup-cosine schedule, teacher training and student distillation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint
from .data import Corpus, SamplingSpec, make_batch
from .distill import DistillConfig, ce_loss, total_loss
from .evaluate import evaluate
from .network import ModelConfig, VideoFocalNet, build_model
from .tensor import GradTape, Parameter, backward

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "step", "lr", "loss_total", "loss_kd", "loss_ce", "top1", "top5")


@dataclass
class ScheduleSpec:
    base_lr: float = 0.1
    warmup_lr: float = 0.001
    warmup_epochs: int = 20
    total_epochs: int = 120
    batch_size: int = 8
    reference_batch: int = 512
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_grad: float | None = None

    def validate(self) -> "ScheduleSpec":
        if self.total_epochs < 1 or self.batch_size < 1 or self.reference_batch < 1:
            raise ValueError("schedule epochs, batch_size and reference_batch must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError(
                f"schedule.warmup_epochs ({self.warmup_epochs}) must be < schedule.epochs ({self.total_epochs})")
        if self.base_lr <= 0 or self.warmup_lr < 0:
            raise ValueError("schedule learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"schedule.momentum must be in [0, 1), got {self.momentum}")
        return self


def lr_at(step: int, steps_per_epoch: int, spec: ScheduleSpec) -> float:
    """Linear warmup from the scaled warmup LR to the scaled peak, then a
    cosine decay to zero at ``total_epochs * steps_per_epoch``."""
    factor = spec.batch_size / spec.reference_batch
    peak = spec.base_lr * factor
    start = spec.warmup_lr * factor
    warm = spec.warmup_epochs * steps_per_epoch
    total = spec.total_epochs * steps_per_epoch
    if step < warm:
        return start + (peak - start) * step / warm
    progress = min((step - warm) / max(total - warm, 1), 1.0)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: list[Parameter], lr: float, state: OptimizerState,
             grads: dict[str, np.ndarray] | None = None) -> None:
    """``v <- mu*v + g + wd*theta``; ``theta <- theta - lr*v``.

    Gradients come from ``grads`` by name, else from ``p.grad``.  Parameter
    arrays are replaced, never written in place."""
    for p in params:
        if not p.requires_grad:
            continue
        g = grads.get(p.name) if grads is not None else p.grad
        if g is None:
            raise ValueError(f"missing gradient for trainable parameter {p.name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        buf = state.buffers.get(p.name)
        buf = g.astype(p.dtype, copy=True) if buf is None else state.momentum * buf + g
        state.buffers[p.name] = buf
        p.data = (p.data - p.dtype.type(lr) * buf).astype(p.dtype, copy=False)


def init_buffers(params: list[Parameter], state: OptimizerState) -> None:
    for p in params:
        if p.requires_grad and p.name not in state.buffers:
            state.buffers[p.name] = np.zeros_like(p.data)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.dtype.type(s)
    return total


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    rows: list[dict] = field(default_factory=list)
    model: VideoFocalNet | None = None


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


def run_training(
    corpus: Corpus,
    cfg: ModelConfig,
    spec: ScheduleSpec,
    seed: int,
    sampling: SamplingSpec | None = None,
    crop_size: int = 32,
    crop_scale: tuple[float, float] = (0.08, 1.0),
    teacher: VideoFocalNet | None = None,
    distill_cfg: DistillConfig | None = None,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
    on_epoch: Callable[[dict, Checkpoint], None] | None = None,
    eval_every: int = 1,
    meta: dict | None = None,
) -> TrainResult:
    """Shared loop for supervised training (``teacher is None``) and
    distillation.  One metrics row per epoch; the returned checkpoint holds
    everything needed to resume bit-identically."""
    spec.validate()
    cfg.validate()
    if not corpus.train:
        raise ValueError("training split is empty")
    if teacher is not None:
        if teacher.cfg.num_classes != cfg.num_classes:
            raise ValueError(
                f"class-count mismatch: teacher head has {teacher.cfg.num_classes}, student {cfg.num_classes}")
        teacher.eval()
        teacher.freeze()
        distill_cfg = distill_cfg or DistillConfig()
    sampling = sampling or SamplingSpec()
    train_spec = SamplingSpec(sampling.T, sampling.stride, "train")
    eval_spec = SamplingSpec(sampling.T, sampling.stride, "eval")

    model = build_model(cfg, seed)
    params = model.parameters()
    state = OptimizerState(spec.momentum, spec.weight_decay)
    rng = np.random.default_rng([seed, 1])
    first_epoch = 1
    if resume is not None:
        model.load_state_dict(resume.params)
        state.buffers = {k: v.copy() for k, v in resume.buffers.items()}
        rng = _restore_rng(resume.rng_state)
        first_epoch = resume.epoch + 1
    init_buffers(params, state)

    n = len(corpus.train)
    spe = math.ceil(n / spec.batch_size)
    last = spec.total_epochs if stop_after is None else min(stop_after, spec.total_epochs)
    rows = []
    ckpt = resume
    run_meta = {"model": cfg.to_dict(), **(meta or {})}
    for epoch in range(first_epoch, last + 1):
        model.train()
        order = rng.permutation(n)
        sums = np.zeros(3)
        step = (epoch - 1) * spe
        lr = 0.0
        for b in range(spe):
            idx = order[b * spec.batch_size:(b + 1) * spec.batch_size]
            x, y = make_batch([corpus.train[i] for i in idx], train_spec, crop_size, rng, crop_scale)
            lr = lr_at(step, spe, spec)
            model.zero_grad()
            with GradTape() as tape:
                logits = model(x, rng)
                if teacher is not None:
                    t_logits = teacher(x)
                    losses = total_loss(t_logits, logits, y, distill_cfg)
                    loss = losses.total
                    vals = losses.values()
                else:
                    loss = ce_loss(y, logits)
                    vals = (0.0, float(loss.data), float(loss.data))
            backward(loss, tape)
            if spec.clip_grad:
                clip_grad_norm(params, spec.clip_grad)
            sgd_step(params, lr, state)
            sums += np.array([vals[2], vals[0], vals[1]]) * len(idx)
            step += 1
        means = sums / n
        top1 = top5 = float("nan")
        if corpus.val and (epoch % eval_every == 0 or epoch == last):
            report = evaluate(model, corpus.val, eval_spec, crop_size)
            top1, top5 = report.top1, report.top5
        row = {"epoch": epoch, "step": step, "lr": lr, "loss_total": means[0], "loss_kd": means[1],
               "loss_ce": means[2], "top1": top1, "top5": top5}
        rows.append(row)
        log.info("epoch %d loss %.4f (kd %.4f ce %.4f) val top1 %.3f", epoch, means[0], means[1], means[2], top1)
        ckpt = Checkpoint(
            params={k: v.copy() for k, v in model.state_dict().items()},
            fingerprint=cfg.fingerprint(),
            epoch=epoch,
            momentum=state.momentum,
            weight_decay=state.weight_decay,
            buffers={k: v.copy() for k, v in state.buffers.items()},
            rng_state=_rng_state(rng),
            meta=run_meta,
        )
        if on_epoch is not None:
            on_epoch(row, ckpt)
    return TrainResult(ckpt, rows, model)


def train_teacher(corpus: Corpus, cfg: ModelConfig, spec: ScheduleSpec, seed: int, **kw) -> TrainResult:
    return run_training(corpus, cfg, spec, seed, meta={"role": "teacher"}, **kw)


def model_from_checkpoint(ckpt: Checkpoint) -> VideoFocalNet:
    if "model" not in ckpt.meta:
        raise ValueError("checkpoint carries no model config")
    cfg = ModelConfig(**ckpt.meta["model"])
    if cfg.fingerprint() != ckpt.fingerprint:
        raise ValueError("checkpoint config does not match its fingerprint")
    model = build_model(cfg, 0)
    model.load_state_dict(ckpt.params)
    return model


def distill_student(corpus: Corpus, teacher_ckpt: Checkpoint, student_cfg: ModelConfig,
                    distill_cfg: DistillConfig, spec: ScheduleSpec, seed: int, **kw) -> TrainResult:
    teacher = model_from_checkpoint(teacher_ckpt)
    meta = {"role": "student", "alpha": distill_cfg.alpha, "tau": distill_cfg.tau}
    return run_training(corpus, student_cfg, spec, seed, teacher=teacher, distill_cfg=distill_cfg,
                        meta=meta, **kw)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics(rows: list[dict], path, append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in METRICS_HEADER])


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("epoch", "step") else float(v)) for k, v in r.items()} for r in rows]
