import numpy as np
import pytest

from stfocal import tensor as tc
from stfocal.network import (PATCH_SIZES, PRESETS, Block, ModelConfig, build_model, drop_path, flop_count,
                             param_count, stage_shapes, student_config, teacher_config)
from stfocal.tensor import FlopCounter, Tensor

TINY = ModelConfig(embed_dim=8, depths=(1, 1, 1, 1), num_classes=5, drop_path_rate=0.1)


def test_block_counts_match_presets():
    assert sum(student_config().depths) == 5
    assert sum(teacher_config().depths) == 24
    assert set(PRESETS) == {"teacher", "student"}
    assert len(build_model(student_config(num_classes=3), 0).blocks) == 5


def test_config_validation():
    with pytest.raises(ValueError, match="depths"):
        ModelConfig(depths=(1, 1, 1)).validate()
    with pytest.raises(ValueError, match="drop_path_rate"):
        ModelConfig(drop_path_rate=1.0).validate()
    with pytest.raises(ValueError, match="focal_windows"):
        ModelConfig(focal_windows=(3, 4, 3, 3)).validate()
    assert ModelConfig().stage_dims() == [96, 192, 384, 768]


def test_fingerprint_tracks_config():
    a, b = student_config(), student_config()
    assert a.fingerprint() == b.fingerprint()
    b.embed_dim = 64
    assert a.fingerprint() != b.fingerprint()


def test_same_seed_same_parameters():
    a, b = build_model(TINY, 3), build_model(TINY, 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    c = build_model(TINY, 4)
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), c.parameters()))


def test_drop_path_rates_are_linear():
    model = build_model(ModelConfig(embed_dim=8, depths=(1, 1, 2, 1), drop_path_rate=0.2, num_classes=2), 0)
    assert [b.drop_path_prob for b in model.blocks] == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])


def test_forward_shapes():
    model = build_model(TINY, 0).eval()
    x = np.random.default_rng(0).normal(size=(2, 32, 64, 3)).astype(np.float32)
    assert model(x).shape == (5,)
    assert model(np.stack([x, x])).shape == (2, 5)
    with pytest.raises(ValueError, match="divisible"):
        model(np.zeros((2, 48, 40, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        model(np.zeros((2, 32, 32, 4), dtype=np.float32))


def test_full_size_shape():
    model = build_model(ModelConfig(embed_dim=8, depths=(0, 0, 1, 0), num_classes=101), 0).eval()
    assert model(np.zeros((8, 224, 224, 3), dtype=np.float32)).shape == (101,)


def test_eval_forward_is_pure():
    model = build_model(TINY, 0).eval()
    x = np.random.default_rng(1).normal(size=(2, 32, 32, 3)).astype(np.float32)
    out = model(np.stack([x, x])).data
    assert out[0].tobytes() == out[1].tobytes()
    assert model(x[None]).data.tobytes() == model(x[None]).data.tobytes()
    assert np.allclose(model(x).data, out[0], atol=1e-6)


def test_stage_shapes():
    for cfg in (student_config(), teacher_config()):
        shapes = stage_shapes(cfg, 8, 224, 224)
        for s, (t, h, w, c) in enumerate(shapes):
            assert (t, h, w) == (8, 224 // (4 * 2 ** s), 224 // (4 * 2 ** s))
            assert c == cfg.embed_dim * 2 ** s
    model = build_model(TINY, 0).eval()
    x = Tensor(np.zeros((2, 64, 32, 3)))
    for st, shape in zip(model.stages, stage_shapes(TINY, 2, 64, 32)):
        x = st.patch_embed(x)
        for blk in st.blocks:
            x = blk(x)
        assert x.shape == shape


def test_param_count_is_sum_of_parameter_sizes():
    model = build_model(TINY, 0)
    independent = 0
    seen = set()
    stack = [model]
    while stack:
        obj = stack.pop()
        for val in vars(obj).values():
            items = val if isinstance(val, list) else [val]
            for v in items:
                if isinstance(v, tc.Parameter) and id(v) not in seen:
                    seen.add(id(v))
                    independent += v.data.size
                elif hasattr(v, "named_parameters"):
                    stack.append(v)
    assert param_count(model) == independent


def test_zero_depth_param_count_hand_sum():
    cfg = ModelConfig(embed_dim=4, depths=(0, 0, 0, 0), num_classes=7)
    dims = cfg.stage_dims()
    expected, cin = 0, 3
    for p, c in zip(PATCH_SIZES, dims):
        expected += p * p * cin * c + c + 2 * c
        cin = c
    expected += 2 * dims[-1] + dims[-1] * 7 + 7
    assert param_count(build_model(cfg, 0)) == expected


def test_linear_flops_example():
    with FlopCounter() as fc:
        tc.linear(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 3))))
    assert fc.total == 12


@pytest.mark.parametrize("cfg", [
    TINY,
    ModelConfig(embed_dim=6, depths=(1, 0, 2, 1), focal_levels=(1, 2, 3, 1), num_classes=4),
    ModelConfig(embed_dim=4, depths=(1, 1, 1, 1), num_classes=3, temporal_mode="pointwise", out_proj=False),
])
def test_analytic_flops_match_instrumented(cfg):
    model = build_model(cfg, 0).eval()
    with FlopCounter() as fc:
        model(np.zeros((3, 64, 32, 3), dtype=np.float32))
    assert fc.total == flop_count(model, 3, 64, 32)


def test_drop_path_examples():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert drop_path(x, 0.0, True, np.random.default_rng(0)) is x
    assert drop_path(x, 0.7, False, None) is x
    assert np.all(drop_path(x, 1.0, True, None).data == 0)
    with pytest.raises(ValueError):
        drop_path(x, 1.5, True, np.random.default_rng(0))


def test_drop_path_preserves_expectation():
    ones = Tensor(np.ones((10_000, 1)))
    out = drop_path(ones, 0.5, True, np.random.default_rng(1)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.02


def test_block_with_full_drop_is_identity():
    blk = Block(8, 2, 3, 4.0, 1.0, np.random.default_rng(0)).train()
    x = Tensor(np.random.default_rng(1).normal(size=(1, 2, 4, 4, 8)))
    assert np.array_equal(blk(x, np.random.default_rng(2)).data, x.data)


def test_training_forward_uses_rng():
    model = build_model(TINY, 0).train()
    x = np.random.default_rng(1).normal(size=(2, 2, 32, 32, 3)).astype(np.float32)
    a = model(x, np.random.default_rng(5)).data
    b = model(x, np.random.default_rng(5)).data
    assert a.tobytes() == b.tobytes()
