import hashlib

import numpy as np
import pytest

from stfocal.checkpoint import Checkpoint, dumps
from stfocal.data import Corpus, SamplingSpec, SyntheticSpec, generate_synthetic, load_corpus
from stfocal.distill import DistillConfig
from stfocal.evaluate import evaluate
from stfocal.network import ModelConfig, build_model
from stfocal.training import ScheduleSpec, distill_student, run_training, train_teacher

TINY = ModelConfig(embed_dim=8, depths=(1, 0, 1, 0), num_classes=2, drop_path_rate=0.1)
SCHED = ScheduleSpec(base_lr=0.8, warmup_lr=0.008, warmup_epochs=1, total_epochs=3, batch_size=4, clip_grad=1.0)
SAMPLING = SamplingSpec(4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    generate_synthetic(SyntheticSpec(classes=("blink", "static"), samples_per_class=6, frames=8), root)
    return load_corpus(root)


def _run(corpus, **kw):
    return run_training(corpus, TINY, SCHED, 0, sampling=SAMPLING, crop_scale=(0.5, 1.0), **kw)


def test_same_seed_same_run(corpus):
    a, b = _run(corpus), _run(corpus)
    assert a.rows == b.rows
    assert dumps(a.checkpoint) == dumps(b.checkpoint)


def test_resume_is_bit_identical(corpus):
    full = _run(corpus)
    first = _run(corpus, stop_after=1)
    assert first.checkpoint.epoch == 1
    rest = _run(corpus, resume=first.checkpoint)
    assert [r["epoch"] for r in rest.rows] == [2, 3]
    assert first.rows + rest.rows == full.rows
    assert dumps(rest.checkpoint) == dumps(full.checkpoint)


def _teacher_ckpt(corpus):
    return train_teacher(corpus, TINY, SCHED, 7, sampling=SAMPLING, stop_after=1).checkpoint


def _checksum(ckpt: Checkpoint) -> str:
    h = hashlib.sha256()
    for name in sorted(ckpt.params):
        h.update(name.encode())
        h.update(ckpt.params[name].tobytes())
    return h.hexdigest()


def test_alpha_zero_matches_plain_training(corpus):
    teacher = _teacher_ckpt(corpus)
    plain = _run(corpus)
    zero = distill_student(corpus, teacher, TINY, DistillConfig(0.0, 10.0), SCHED, 0, sampling=SAMPLING,
                           crop_scale=(0.5, 1.0))
    for p, z in zip(plain.rows, zero.rows):
        assert abs(p["loss_total"] - z["loss_total"]) <= 1e-6
        assert abs(p["loss_ce"] - z["loss_ce"]) <= 1e-6
        assert z["loss_kd"] > 0.0


def test_teacher_is_untouched(corpus):
    teacher = _teacher_ckpt(corpus)
    before = _checksum(teacher)
    res = distill_student(corpus, teacher, TINY, DistillConfig(0.5, 4.0), SCHED, 0, sampling=SAMPLING)
    assert _checksum(teacher) == before
    assert res.checkpoint.meta["role"] == "student" and res.checkpoint.meta["alpha"] == 0.5
    assert all(r["loss_kd"] > 0 for r in res.rows)


def test_class_mismatch_and_empty_dataset(corpus):
    teacher = _teacher_ckpt(corpus)
    three = ModelConfig(embed_dim=8, depths=(1, 0, 1, 0), num_classes=3)
    with pytest.raises(ValueError, match="class-count"):
        distill_student(corpus, teacher, three, DistillConfig(), SCHED, 0, sampling=SAMPLING)
    with pytest.raises(ValueError, match="empty"):
        run_training(Corpus([], corpus.val, 2), TINY, SCHED, 0)


def test_epoch_callback_sees_every_epoch(corpus):
    seen = []
    _run(corpus, on_epoch=lambda row, ck: seen.append((row["epoch"], ck.epoch)))
    assert seen == [(1, 1), (2, 2), (3, 3)]


@pytest.mark.slow
def test_two_class_smoke_run(tmp_path):
    """A small model fits 64 clips of left vs right motion in 15 epochs."""
    spec = SyntheticSpec(classes=("translate_left", "translate_right"), samples_per_class=40,
                         train_fraction=0.8, seed=0)
    generate_synthetic(spec, tmp_path)
    corpus = load_corpus(tmp_path)
    assert len(corpus.train) == 64
    cfg = ModelConfig(embed_dim=16, depths=(1, 1, 2, 1), num_classes=2, drop_path_rate=0.0)
    sched = ScheduleSpec(base_lr=1.6, warmup_lr=0.016, warmup_epochs=1, total_epochs=15, batch_size=8,
                         clip_grad=1.0)
    res = train_teacher(corpus, cfg, sched, 0, crop_scale=(1.0, 1.0), eval_every=15)
    train_acc = evaluate(res.model, corpus.train, SamplingSpec(8), 32).top1
    print(f"smoke: train top1 {train_acc:.3f}, loss {res.rows[0]['loss_total']:.3f} -> "
          f"{res.rows[-1]['loss_total']:.3f}")
    assert train_acc > 0.9
    assert res.rows[-1]["loss_total"] < res.rows[0]["loss_total"]
    assert np.isfinite([r["loss_total"] for r in res.rows]).all()
