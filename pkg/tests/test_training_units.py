import math

import numpy as np
import pytest

from stfocal.tensor import Parameter
from stfocal.training import (METRICS_HEADER, OptimizerState, ScheduleSpec, clip_grad_norm, init_buffers, lr_at,
                              read_metrics, sgd_step, write_metrics)

TABLE = ScheduleSpec(base_lr=0.1, warmup_lr=0.001, warmup_epochs=20, total_epochs=120, batch_size=8)


def test_lr_anchor_values():
    spe = 35
    assert lr_at(0, spe, TABLE) == pytest.approx(1.5625e-5, abs=1e-15)
    assert lr_at(20 * spe, spe, TABLE) == pytest.approx(1.5625e-3, abs=1e-15)
    assert abs(lr_at(120 * spe, spe, TABLE)) < 1e-12


def test_lr_continuity_and_monotone_decay():
    spe = 7
    warm = 20 * spe
    left = 1.5625e-5 + (1.5625e-3 - 1.5625e-5) * (warm - 1e-9) / warm
    assert abs(lr_at(warm, spe, TABLE) - left) < 1e-12
    lrs = [lr_at(s, spe, TABLE) for s in range(warm, 120 * spe + 1)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    ramp = [lr_at(s, spe, TABLE) for s in range(warm + 1)]
    assert all(b > a for a, b in zip(ramp, ramp[1:]))


def test_lr_cosine_midpoint():
    spe = 10
    mid = 20 * spe + 50 * spe
    assert lr_at(mid, spe, TABLE) == pytest.approx(0.5 * 1.5625e-3)


def test_schedule_validation():
    with pytest.raises(ValueError, match="warmup"):
        ScheduleSpec(warmup_epochs=5, total_epochs=5).validate()
    with pytest.raises(ValueError):
        ScheduleSpec(base_lr=0.0).validate()
    with pytest.raises(ValueError):
        ScheduleSpec(momentum=1.0).validate()


def _param(values, name="w"):
    return Parameter(np.array(values, dtype=np.float64), name=name)


def test_sgd_vanilla_and_zero_lr():
    p = _param([1.0, -2.0])
    sgd_step([p], 0.1, OptimizerState(0.0, 0.0), {"w": np.array([0.5, 1.0])})
    assert p.data.tolist() == pytest.approx([0.95, -2.1])
    q = _param([1.0, -2.0])
    sgd_step([q], 0.0, OptimizerState(0.9, 0.1), {"w": np.array([0.5, 1.0])})
    assert q.data.tolist() == [1.0, -2.0]


def test_sgd_momentum_unroll():
    p = _param([0.0])
    state = OptimizerState(0.9, 0.0)
    init_buffers([p], state)
    g = {"w": np.array([1.0])}
    sgd_step([p], 0.1, state, g)
    assert p.data[0] == pytest.approx(-0.1)
    sgd_step([p], 0.1, state, g)
    assert p.data[0] == pytest.approx(-0.1 - 0.19)


def test_sgd_weight_decay_and_missing_grad():
    p = _param([2.0])
    sgd_step([p], 0.5, OptimizerState(0.0, 0.1), {"w": np.array([0.0])})
    assert p.data[0] == pytest.approx(2.0 - 0.5 * 0.2)
    with pytest.raises(ValueError, match="missing gradient"):
        sgd_step([_param([1.0], "v")], 0.1, OptimizerState(), {})
    frozen = Parameter(np.ones(1), name="f", requires_grad=False)
    sgd_step([frozen], 0.1, OptimizerState(), {})
    assert frozen.data[0] == 1.0


def test_sgd_replaces_arrays():
    p = _param([1.0])
    before = p.data
    sgd_step([p], 0.1, OptimizerState(), {"w": np.array([1.0])})
    assert before[0] == 1.0 and p.data is not before


def test_clip_grad_norm():
    a, b = _param([3.0], "a"), _param([4.0], "b")
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0)


def test_metrics_csv_round_trip(tmp_path):
    rows = [{"epoch": 1, "step": 4, "lr": 0.1 / 3, "loss_total": 1.25, "loss_kd": 0.0, "loss_ce": 1.25,
             "top1": 0.5, "top5": float("nan")}]
    write_metrics(rows, tmp_path / "m.csv")
    write_metrics([{**rows[0], "epoch": 2, "step": 8}], tmp_path / "m.csv", append=True)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == ",".join(METRICS_HEADER)
    assert len(text) == 3
    back = read_metrics(tmp_path / "m.csv")
    assert back[0]["lr"] == 0.1 / 3 and back[1]["epoch"] == 2
    assert math.isnan(back[0]["top5"])
