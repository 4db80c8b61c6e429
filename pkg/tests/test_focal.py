import numpy as np
import pytest

from gradcheck import check_gradients
from stfocal import tensor as tc
from stfocal.focal import (SPATIAL, TEMPORAL, FocalModulation, contextualize, gated_aggregate, global_level,
                           modulate, project_inputs, reference_modulation_naive, st_focal_modulation_forward)
from stfocal.nn import Module
from stfocal.tensor import Tensor


def randomize(module: Module, rng, scale=0.5):
    for p in module.parameters():
        p.data = (scale * rng.normal(size=p.shape)).astype(p.dtype)
    return module


def small_layer(seed, dim=6, level=2, window=3, dtype=np.float32, **kw):
    rng = np.random.default_rng(seed)
    return randomize(FocalModulation(dim, level, window, rng, dtype=dtype, **kw), rng)


def test_shape_preserved():
    layer = FocalModulation(16, 2, 3, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(4, 8, 8, 16)))
    assert layer(x).shape == (4, 8, 8, 16)
    assert layer(Tensor(np.zeros((2, 4, 8, 8, 16)))).shape == (2, 4, 8, 8, 16)


def test_project_inputs_shapes_and_channel_check():
    layer = FocalModulation(4, 2, 3, np.random.default_rng(0))
    q, zs, zt, gates = project_inputs(Tensor(np.zeros((2, 3, 3, 4))), layer)
    assert q.shape == zs.shape == zt.shape == (2, 3, 3, 4)
    assert gates.G_s.shape == gates.G_t.shape == (2, 3, 3, 3)
    with pytest.raises(ValueError, match="channels"):
        project_inputs(Tensor(np.zeros((2, 3, 3, 5))), layer)


def test_project_inputs_zero_weights_give_bias():
    layer = FocalModulation(4, 2, 3, np.random.default_rng(0))
    for lin in (layer.query_proj, layer.spatial_proj, layer.temporal_proj):
        lin.weight.data[:] = 0
        lin.bias.data[:] = np.arange(lin.bias.shape[0])
    q, zs, _, gates = project_inputs(Tensor(np.random.default_rng(1).normal(size=(1, 2, 2, 4))), layer)
    assert np.all(q.data == np.arange(4))
    assert np.all(zs.data == np.arange(4))
    assert np.all(gates.G_s.data == np.arange(4, 7))


def test_contextualize_identity_and_zero():
    x = np.abs(np.random.default_rng(0).normal(size=(2, 4, 4, 3)))
    ident = np.zeros((3, 3, 3))
    ident[1, 1] = 1
    (z1,) = contextualize(Tensor(x), [Tensor(ident)], SPATIAL)
    assert np.allclose(z1.data, tc.gelu(Tensor(x)).data)
    zeros = contextualize(Tensor(np.zeros((2, 4, 4, 3))), [Tensor(np.ones((3, 3, 3))), Tensor(np.ones((5, 5, 3)))],
                          SPATIAL)
    assert all(np.all(z.data == 0) for z in zeros)
    with pytest.raises(ValueError):
        contextualize(Tensor(x), [Tensor(np.ones((3, 3, 3)))], "diagonal")


def test_contextualize_checks_kernel_growth():
    x = Tensor(np.zeros((2, 4, 4, 3)))
    with pytest.raises(ValueError):
        contextualize(x, [Tensor(np.ones((3, 3, 3))), Tensor(np.ones((3, 3, 3)))], SPATIAL, focal_window=3)


def test_spatial_receptive_field():
    rng = np.random.default_rng(0)
    kerns = [Tensor(rng.normal(size=(3, 3, 2))), Tensor(rng.normal(size=(5, 5, 2)))]
    x = rng.normal(size=(1, 11, 11, 2))
    base = contextualize(Tensor(x), kerns, SPATIAL)[1].data
    x[0, 5, 5] += 1.0
    moved = contextualize(Tensor(x), kerns, SPATIAL)[1].data
    diff = np.abs(moved - base).max(axis=(0, 3))
    yy, xx = np.nonzero(diff)
    # level-2 radius is 1 + 2 = 3, inside the window + 2 = 5 bound
    assert np.max(np.maximum(np.abs(yy - 5), np.abs(xx - 5))) <= 3
    assert diff[5, 5] > 0


def test_global_level_examples():
    const = Tensor(np.full((2, 3, 3, 4), 7.0))
    assert np.all(global_level(const, SPATIAL).data == 7.0)
    assert np.all(global_level(const, TEMPORAL).data == 7.0)
    x = np.random.default_rng(0).normal(size=(3, 1, 1, 4))
    assert np.array_equal(global_level(Tensor(x), SPATIAL).data, x)
    two = np.zeros((2, 1, 2, 1))
    two[0], two[1] = 1.0, 3.0
    assert np.all(global_level(Tensor(two), TEMPORAL).data == 2.0)
    with pytest.raises(ValueError):
        global_level(const, "both")


def test_gated_aggregate_examples():
    ones = [Tensor(np.ones((2, 3, 3, 4))) for _ in range(3)]
    out = gated_aggregate(ones, Tensor(np.ones((2, 3, 3, 3))))
    assert np.all(out.data == 3.0)
    rng = np.random.default_rng(1)
    levels = [Tensor(rng.normal(size=(2, 3, 3, 4))) for _ in range(3)]
    for j in range(3):
        g = np.zeros((2, 3, 3, 3))
        g[..., j] = 1.0
        assert np.array_equal(gated_aggregate(levels, Tensor(g)).data, levels[j].data)
    with pytest.raises(ValueError, match="levels"):
        gated_aggregate(levels, Tensor(np.ones((2, 3, 3, 2))))


def test_gated_aggregate_matches_loops():
    rng = np.random.default_rng(2)
    levels = [rng.normal(size=(2, 3, 3, 4)) for _ in range(3)]
    gates = rng.normal(size=(2, 3, 3, 3))
    out = gated_aggregate([Tensor(z) for z in levels], Tensor(gates)).data
    ref = np.zeros((2, 3, 3, 4))
    for t in range(2):
        for h in range(3):
            for w in range(3):
                for c in range(4):
                    ref[t, h, w, c] = sum(gates[t, h, w, l] * levels[l][t, h, w, c] for l in range(3))
    assert np.abs(out - ref).max() < 1e-6


def test_modulate_identity_and_zero_query():
    layer = small_layer(0, dim=4)
    for h in (layer.h_s, layer.h_t):
        h.weight.data[:] = 0
        h.bias.data[:] = 1
    rng = np.random.default_rng(1)
    q = Tensor(rng.normal(size=(2, 3, 3, 4)))
    zs, zt = Tensor(rng.normal(size=q.shape)), Tensor(rng.normal(size=q.shape))
    assert np.allclose(modulate(q, zs, zt, layer).data, layer.out_proj(q).data)
    layer.out_proj = None
    assert np.all(modulate(Tensor(np.zeros(q.shape)), zs, zt, layer).data == 0)
    with pytest.raises(ValueError, match="shape"):
        modulate(q, Tensor(np.ones((2, 3, 3, 3))), zt, layer)


def test_modulate_matches_scalar_recomputation():
    layer = small_layer(3, dim=4, out_proj=False)
    rng = np.random.default_rng(4)
    q, zs, zt = (rng.normal(size=(2, 2, 2, 4)) for _ in range(3))
    y = modulate(Tensor(q), Tensor(zs), Tensor(zt), layer).data
    ws, bs = layer.h_s.weight.data, layer.h_s.bias.data
    wt, bt = layer.h_t.weight.data, layer.h_t.bias.data
    for idx in np.ndindex(q.shape):
        c = idx[-1]
        ref = q[idx] * (ws[c] * zs[idx] + bs[c]) * (wt[c] * zt[idx] + bt[c])
        assert abs(y[idx] - ref) < 1e-5


@pytest.mark.parametrize("seed", range(50))
def test_forward_matches_naive_reference(seed):
    rng = np.random.default_rng([seed, 99])
    T, H, W = (int(v) for v in rng.integers(1, [5, 7, 7]))
    C = int(rng.integers(1, 9))
    L = int(rng.integers(1, 3))
    layer = small_layer(seed, dim=C, level=L, out_proj=bool(seed % 4))
    x = rng.normal(size=(T, H, W, C)).astype(np.float32)
    fast = st_focal_modulation_forward(Tensor(x), layer).data
    slow = reference_modulation_naive(x, layer)
    assert np.abs(fast - slow).max() < 1e-5


def test_naive_reference_size_guard_and_special_params():
    layer = small_layer(0, dim=4)
    with pytest.raises(ValueError):
        reference_modulation_naive(np.zeros((5, 2, 2, 4)), layer)
    x = np.random.default_rng(1).normal(size=(2, 3, 3, 4))
    for p in layer.parameters():
        p.data[...] = 0
    assert np.all(reference_modulation_naive(x, layer) == 0)
    ident = small_layer(2, dim=4)
    for h in (ident.h_s, ident.h_t):
        h.weight.data[:] = 0
        h.bias.data[:] = 1
    ref = ident.out_proj(ident.query_proj(Tensor(x))).data
    assert np.abs(reference_modulation_naive(x, ident) - ref).max() < 1e-5


def test_pointwise_mode_has_no_temporal_reach():
    layer = small_layer(5, dim=4, temporal_mode="pointwise")
    layer.capture = True
    x = np.random.default_rng(6).normal(size=(4, 3, 3, 4))
    layer(Tensor(x))
    base = layer.last_modulators.M_t.copy()
    assert np.abs(st_focal_modulation_forward(Tensor(x), layer).data
                  - reference_modulation_naive(x, layer)).max() < 1e-5
    assert layer.level_kernels_t[0].shape == (4, 4)
    # only the global mean over T links frames
    x[0] += 1.0
    layer(Tensor(x))
    assert not np.array_equal(layer.last_modulators.M_t[1:], base[1:])


def _modulators(layer, x):
    layer.capture = True
    layer(Tensor(x))
    m = layer.last_modulators
    layer.capture = False
    return m


def test_spatial_modulator_is_per_frame():
    layer = small_layer(7, dim=5)
    x = np.random.default_rng(8).normal(size=(4, 5, 5, 5))
    base = _modulators(layer, x).M_s
    x[2] += np.random.default_rng(9).normal(size=x[2].shape)
    moved = _modulators(layer, x).M_s
    for t in (0, 1, 3):
        assert np.array_equal(base[t], moved[t])
    assert not np.array_equal(base[2], moved[2])


def test_temporal_modulator_is_per_location():
    layer = small_layer(10, dim=5)
    x = np.random.default_rng(11).normal(size=(4, 5, 5, 5))
    base = _modulators(layer, x).M_t
    x[:, 1, 3] += 1.0
    moved = _modulators(layer, x).M_t
    mask = np.ones((5, 5), dtype=bool)
    mask[1, 3] = False
    assert np.array_equal(base[:, mask], moved[:, mask])
    assert not np.array_equal(base[:, 1, 3], moved[:, 1, 3])


def test_invalid_layer_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        FocalModulation(4, 0, 3, rng)
    with pytest.raises(ValueError):
        FocalModulation(4, 2, 4, rng)
    with pytest.raises(ValueError):
        FocalModulation(4, 2, 3, rng, temporal_mode="both")
    assert [FocalModulation(4, 3, 3, rng).kernel_size(l) for l in (1, 2, 3)] == [3, 5, 7]


def test_layer_gradients_f64_mean_output():
    layer = small_layer(0, dim=3, dtype=np.float64)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 3, 3)))
    assert check_gradients(lambda: tc.mean_all(layer(x)), layer.parameters() + [x], eps=1e-6) < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients_f32(seed):
    """f32 backward vs central differences (eps 1e-3) of the same weights
    evaluated in float64, so f32 rounding does not swamp the difference."""
    rng = np.random.default_rng([seed, 5])
    level = 1 + seed % 2
    layer = small_layer(seed, dim=3, level=level)
    shadow = FocalModulation(3, level, 3, dtype=np.float64)
    x = Tensor(rng.normal(size=(3, 3, 3, 3)).astype(np.float32))
    w = rng.normal(size=x.shape)

    def numeric():
        shadow.load_state_dict(layer.state_dict())
        return float((shadow(Tensor(x.data.astype(np.float64))).data * w).sum())

    err = check_gradients(lambda: tc.sum_all(tc.mul(layer(x), Tensor(w.astype(np.float32)))),
                          layer.parameters() + [x], eps=1e-3, numeric_fn=numeric)
    assert err < 1e-3
