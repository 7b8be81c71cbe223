import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from gradcheck import check_params
from sepgconv import functional as Fn
from sepgconv.checks import LAYER_TYPES, equivariance_deviations, make_layer
from sepgconv.groups import (P4, P4M, expand_separable_pointwise, group, permute_group_axis,
                             transform_feature_map, transform_image)
from sepgconv.layers import (BatchNorm, DepthwiseSeparableConv2d, GConv, LiftingGConv, SepGConvG, SepGConvGC,
                             depthwise_separable_conv2d, group_coset_pool)
from sepgconv.tensor import Parameter, Tensor

GROUPS = [P4, P4M]
CROSS = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _input(kind, spec, rng, C=3, H=7, B=2):
    if kind == "lift":
        return rng.standard_normal((B, C, H, H))
    return rng.standard_normal((B, C, spec.order, H, H))


# ---------------------------------------------------------------------------
# forward semantics against loop oracles
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
@pytest.mark.parametrize("padding, k", [("same", 3), ("valid", 3), ("valid", 2)])
def test_lift_matches_oracle(backend, spec, padding, k, rng):
    layer = LiftingGConv(spec, 2, 3, k, padding=padding, rng=rng, dtype=np.float64)
    layer.bias.data[:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 6, 6))
    expected = oracles.lift(x, oracles.expand_full(spec.order, layer.F.data), padding)
    expected += layer.bias.data[:, None, None, None]
    np.testing.assert_allclose(layer(x).data, expected, atol=1e-12)


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_gconv_matches_oracle(backend, spec, padding, rng):
    layer = GConv(spec, 2, 2, 3, padding=padding, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, spec.order, 5, 5))
    expected = oracles.gconv(x, oracles.expand_full(spec.order, layer.F.data), padding)
    np.testing.assert_allclose(layer(x).data, expected, atol=1e-12)


def test_lift_with_1x1_kernels_gives_identical_slices(rng):
    layer = LiftingGConv(P4M, 2, 3, 1, rng=rng, dtype=np.float64)
    y = layer(rng.standard_normal((2, 5, 5))).data
    for h in range(8):
        assert np.array_equal(y[:, h], y[:, 0])


def test_lift_with_invariant_kernel_gives_identical_slices(rng):
    layer = LiftingGConv(P4, 1, 1, 3, dtype=np.float64)
    layer.F.data[...] = CROSS
    y = layer(rng.standard_normal((1, 6, 6))).data
    for h in range(4):
        assert np.array_equal(y[:, h], y[:, 0])


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
def test_gconv_identity_slice_is_pure_permutation(spec, rng):
    C = 2
    layer = GConv(spec, C, C, 1, dtype=np.float64)
    layer.F.data[...] = 0.0
    for c in range(C):
        layer.F.data[c, c, 0] = 1.0
    x = rng.standard_normal((C, spec.order, 4, 4))
    y = layer(x).data
    # Y[n, h] = X[n, h^-1 * 0 slot] -> the slot g with h^-1 g = 0, i.e. g = h
    np.testing.assert_array_equal(y, x)


def test_gconv_zero_filter_gives_bias(rng):
    layer = GConv(P4, 2, 3, 3, dtype=np.float64)
    layer.F.data[...] = 0.0
    layer.bias.data[:] = [1.0, -2.0, 0.5]
    y = layer(rng.standard_normal((2, 4, 5, 5))).data
    assert np.array_equal(y, np.broadcast_to(layer.bias.data[:, None, None, None], y.shape))


def test_group_axis_mismatch_rejected(rng):
    layer = GConv(P4, 2, 2, 3)
    with pytest.raises(ValueError):
        layer(rng.standard_normal((2, 8, 5, 5)).astype(np.float32))
    with pytest.raises(ValueError):
        LiftingGConv(P4, 2, 2, 3)(rng.standard_normal((3, 5, 5)).astype(np.float32))
    with pytest.raises(ValueError):
        SepGConvG(P4, 2, 2, 4, padding="same")


# ---------------------------------------------------------------------------
# separable layers
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
def test_sep_g_all_ones_equals_full_with_copies(spec, rng):
    sep = SepGConvG(spec, 2, 3, 3, rng=rng, dtype=np.float64)
    sep.w.data[...] = 1.0
    full = GConv(spec, 2, 3, 3, dtype=np.float64)
    full.F.data[...] = sep.K.data[:, :, None]
    full.bias.data[...] = sep.bias.data
    x = rng.standard_normal((2, 2, spec.order, 6, 6))
    for path in ("naive", "efficient"):
        np.testing.assert_allclose(sep(x, path=path).data, full(x).data, atol=1e-12)


def test_sep_g_one_hot_sees_one_input_group(rng):
    sep = SepGConvG(P4, 1, 1, 3, rng=rng, dtype=np.float64)
    sep.w.data[...] = 0.0
    sep.w.data[0, 0, 2] = 1.0
    x = rng.standard_normal((1, 4, 6, 6))
    y = sep(x).data
    wt = expand_separable_pointwise(P4, sep.w.data)  # [n, h, c, g]
    for h in range(4):
        g = int(np.flatnonzero(wt[0, h, 0])[0])
        K = np.rot90(sep.K.data[0, 0], h)
        np.testing.assert_allclose(y[0, h], oracles.conv2d(x[0, g][None], K[None, None])[0], atol=1e-12)
        # changing any other input slice leaves this output slice untouched
        x2 = x.copy()
        x2[0, (g + 1) % 4] += 1.0
        np.testing.assert_array_equal(sep(x2).data[0, h], y[0, h])


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
def test_sep_one_hot_identity_is_permutation(spec, rng):
    for cls in (SepGConvG, SepGConvGC):
        layer = cls(spec, 1, 1, 1, dtype=np.float64)
        layer.K.data[...] = 1.0
        layer.w.data[...] = 0.0
        layer.w.data[0, 0, 0] = 1.0
        x = rng.standard_normal((1, spec.order, 4, 4))
        np.testing.assert_array_equal(layer(x).data, x)


def test_gc_with_one_input_channel_equals_g(rng):
    for spec in GROUPS:
        g = SepGConvG(spec, 1, 3, 3, rng=rng, dtype=np.float64)
        gc = SepGConvGC(spec, 1, 3, 3, dtype=np.float64)
        gc.K.data[...] = g.K.data[:, 0]
        gc.w.data[...] = g.w.data
        x = rng.standard_normal((2, 1, spec.order, 5, 5))
        assert np.array_equal(gc.full_filter(), g.full_filter())
        np.testing.assert_allclose(gc(x).data, g(x).data, atol=1e-13)


@given(
    C_in=st.integers(1, 8), C_out=st.integers(1, 8), H=st.integers(1, 8), k=st.sampled_from([1, 3, 5, 7]),
    order=st.sampled_from([4, 8]), kind=st.sampled_from(["g", "gc"]), padding=st.sampled_from(["same", "valid"]),
    seed=st.integers(0, 2**16),
)
def test_sep_paths_agree_property(C_in, C_out, H, k, order, kind, padding, seed):
    if padding == "valid" and k > H:
        return
    rng = np.random.default_rng(seed)
    spec = P4 if order == 4 else P4M
    layer = make_layer(kind, spec, C_in, C_out, k, rng, np.float64, padding)
    x = rng.standard_normal((1, C_in, order, H, H))
    diff = np.abs(layer(x, path="efficient").data - layer(x, path="naive").data).max()
    assert diff < 1e-10


@pytest.mark.parametrize("kind", ["g", "gc"])
def test_sep_paths_agree_float32(backend, kind, rng):
    layer = make_layer(kind, P4M, 4, 5, 3, rng, np.float32)
    x = rng.standard_normal((2, 4, 8, 8, 8)).astype(np.float32)
    assert np.abs(layer(x, path="efficient").data - layer(x, path="naive").data).max() < 1e-5


def test_separable_path_name_checked(rng):
    layer = make_layer("g", P4, 1, 1, 3, rng)
    with pytest.raises(ValueError):
        layer(np.zeros((1, 4, 3, 3)), path="fast")


def test_full_filter_matches_expanded_identity_slice(rng):
    for kind in ("g", "gc"):
        layer = make_layer(kind, P4M, 3, 2, 3, rng)
        Ft = layer.expanded_filter().data  # [n, h, c, g, k, k]
        assert np.array_equal(Ft[:, 0], layer.full_filter())


# ---------------------------------------------------------------------------
# equivariance, gradients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("group_name", ["p4", "p4m"])
@pytest.mark.parametrize("kind", LAYER_TYPES)
def test_equivariance(backend, group_name, kind):
    assert equivariance_deviations(group_name, kind, seed=3).max() < 1e-10


@pytest.mark.parametrize("group_name", ["p4", "p4m"])
@pytest.mark.parametrize("kind", ["lift", "full", "g", "gc"])
def test_equivariance_valid_padding_with_even_kernel(group_name, kind, rng):
    spec = group(group_name)
    layer = make_layer(kind, spec, 2, 3, 4, rng, np.float64, padding="valid")
    x = _input(kind, spec, rng, C=2, H=9)
    y = layer(x).data
    for g in spec.elements():
        xg = transform_image(spec, g, x) if kind == "lift" else transform_feature_map(spec, g, x)
        assert np.abs(layer(xg).data - transform_feature_map(spec, g, y)).max() < 1e-10


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
@pytest.mark.parametrize("kind", LAYER_TYPES)
def test_layer_gradients(backend, spec, kind, rng):
    layer = make_layer(kind, spec, 2, 3, 3, rng, np.float64)
    x = Parameter(_input(kind, spec, rng, C=2, H=5))
    params = dict(layer.named_parameters())
    params["input"] = x
    probe = rng.standard_normal(layer(x).shape)
    errs = check_params(lambda: layer(x), params, probe, n_probe=25, rng=rng)
    assert max(errs.values()) < 1e-4, errs


def test_naive_path_gradients(rng):
    for kind in ("g", "gc"):
        layer = make_layer(kind, P4, 2, 2, 3, rng, np.float64)
        x = Parameter(rng.standard_normal((1, 2, 4, 5, 5)))
        probe = rng.standard_normal((1, 2, 4, 5, 5))
        errs = check_params(lambda: layer(x, path="naive"), dict(layer.named_parameters()), probe, 25, rng)
        assert max(errs.values()) < 1e-4, errs


# ---------------------------------------------------------------------------
# depthwise separable, coset pooling, invariance mechanism
# ---------------------------------------------------------------------------


def test_depthwise_separable_identity(rng):
    x = rng.standard_normal((3, 5, 5))
    y = depthwise_separable_conv2d(x, np.ones((3, 1, 1)), np.eye(3))
    assert np.array_equal(y.data, x)
    assert not depthwise_separable_conv2d(x, rng.standard_normal((3, 3, 3)), np.zeros((4, 3))).data.any()


def test_depthwise_separable_is_composition(backend, rng):
    x = rng.standard_normal((2, 3, 6, 6))
    K = rng.standard_normal((3, 3, 3))
    P = rng.standard_normal((4, 3))
    expected = Fn.conv2d(Fn.grouped_conv2d(x, K[:, None], 3), P[:, :, None, None])
    np.testing.assert_allclose(depthwise_separable_conv2d(x, K, P).data, expected.data, atol=1e-13)
    with pytest.raises(ValueError):
        depthwise_separable_conv2d(x, K, rng.standard_normal((4, 2)))


def test_depthwise_separable_module_gradients(rng):
    layer = DepthwiseSeparableConv2d(2, 3, 3, rng=rng, dtype=np.float64)
    x = Parameter(rng.standard_normal((2, 2, 5, 5)))
    probe = rng.standard_normal((2, 3, 5, 5))
    errs = check_params(lambda: layer(x), {**dict(layer.named_parameters()), "x": x}, probe, 25, rng)
    assert max(errs.values()) < 1e-4


def test_coset_pool_examples(rng):
    x = np.array([1.0, 5.0, 2.0, 3.0]).reshape(1, 4, 1, 1)
    assert group_coset_pool(x).data.item() == 5.0
    assert group_coset_pool(x, "mean").data.item() == 2.75
    const = np.full((2, 8, 3, 3), 1.5)
    assert np.array_equal(group_coset_pool(const).data, np.full((2, 3, 3), 1.5))
    with pytest.raises(ValueError):
        group_coset_pool(x, "median")


@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
def test_coset_pool_invariant_to_permutation(spec, rng):
    x = rng.standard_normal((2, 3, spec.order, 4, 4))
    for mode in ("max", "mean"):
        ref = group_coset_pool(x, mode).data
        for h in spec.elements():
            out = group_coset_pool(permute_group_axis(spec, h, x), mode).data
            if mode == "max":
                assert np.array_equal(out, ref)
            else:
                np.testing.assert_allclose(out, ref, atol=1e-15)


@pytest.mark.parametrize("cls", [GConv, SepGConvG, SepGConvGC])
@pytest.mark.parametrize("spec", GROUPS, ids=lambda s: s.name)
def test_invariant_identical_filters_give_identical_maps(cls, spec, rng):
    layer = cls(spec, 2, 3, 3, dtype=np.float64)
    if cls is GConv:
        layer.F.data[...] = CROSS
    else:
        layer.K.data[...] = CROSS
        layer.w.data[...] = 0.7
    x = rng.standard_normal((2, 2, spec.order, 6, 6))
    y = layer(x).data
    for h in range(spec.order):
        assert np.array_equal(y[:, :, h], y[:, :, 0])


def test_batchnorm_module_buffers():
    bn = BatchNorm(3)
    names = [n for n, _ in bn.named_buffers()]
    assert names == ["running_mean", "running_var"]
    bn.eval()
    x = Tensor(np.ones((1, 3, 2, 2), np.float32))
    np.testing.assert_allclose(bn(x).data, 1 / np.sqrt(1 + 1e-5), rtol=1e-6)
