import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gradcheck_point
from subbandnet import (
    BandLayout,
    Rng,
    build_model,
    forward,
    init_params,
    loss_and_grads,
    nn,
    preset_layout,
    receptive_field,
    tensor,
    uniform_layout,
)
from subbandnet import subband


class TestPresetLayouts:
    def test_two_bands(self):
        assert preset_layout(2).bands == ((0, 26), (14, 40))

    def test_three_bands(self):
        assert preset_layout(3).bands == ((0, 16), (12, 28), (24, 40))

    def test_four_bands(self):
        assert preset_layout(4).bands == ((0, 14), (8, 22), (16, 30), (26, 40))

    def test_unsupported_count(self):
        with pytest.raises(ValueError):
            preset_layout(5)

    @pytest.mark.parametrize("b", [2, 3, 4])
    def test_presets_cover_all_bins(self, b):
        layout = preset_layout(b)
        covered = np.zeros(40, dtype=bool)
        for lo, hi in layout.bands:
            covered[lo:hi] = True
        assert covered.all()
        assert [lo for lo, _ in layout.bands] == sorted(lo for lo, _ in layout.bands)


class TestUniformLayout:
    def test_three_band_overlap_four_matches_preset(self):
        assert uniform_layout(3, 40, 4).bands == preset_layout(3).bands

    def test_two_band_overlap_twelve_matches_preset(self):
        assert uniform_layout(2, 40, 12).bands == preset_layout(2).bands

    def test_single_band(self):
        assert uniform_layout(1, 40, 0).bands == ((0, 40),)

    def test_zero_overlap_is_partition(self):
        layout = uniform_layout(3, 40, 0)
        assert layout.is_partition()
        assert layout.bands == ((0, 14), (14, 28), (28, 40))

    def test_small_dims(self):
        assert uniform_layout(3, 10, 1).bands == ((0, 4), (3, 7), (6, 10))

    def test_infeasible_width(self):
        with pytest.raises(ValueError):
            uniform_layout(2, 4, 5)

    def test_zero_stride_rejected(self):
        with pytest.raises(ValueError):
            uniform_layout(2, 6, 6)

    def test_negative_overlap_rejected(self):
        with pytest.raises(ValueError):
            uniform_layout(2, 10, -1)


@settings(deadline=None, max_examples=80)
@given(
    num_bands=st.integers(min_value=1, max_value=6),
    feature_dim=st.integers(min_value=4, max_value=64),
    overlap=st.integers(min_value=0, max_value=8),
)
def test_uniform_layout_coverage_property(num_bands, feature_dim, overlap):
    try:
        layout = uniform_layout(num_bands, feature_dim, overlap)
    except ValueError:
        return  # infeasible combinations are rejected, not mis-built
    covered = np.zeros(feature_dim, dtype=int)
    for lo, hi in layout.bands:
        covered[lo:hi] += 1
    assert (covered >= 1).all()
    if overlap == 0:
        assert (covered == 1).all()


class TestBandLayoutValidation:
    def test_gap_rejected(self):
        with pytest.raises(ValueError):
            BandLayout(bands=((0, 3), (5, 8)), feature_dim=8)

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            BandLayout(bands=((4, 8), (0, 5)), feature_dim=8)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            BandLayout(bands=((0, 9),), feature_dim=8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            BandLayout(bands=(), feature_dim=8)


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestBuildModel:
    def test_full_band_dense_input(self):
        spec = build_model("full_band", k=8)
        assert spec.param_shapes()["dense/w"] == (49 * 20 * 8, 12)

    def test_overlapped_channel_concat_shapes(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(3))
        conv2 = next(l for l in spec.layers if l.name == "conv2")
        assert conv2.in_shape == (49, 8, 24)
        assert spec.param_shapes()["dense/w"] == (49 * 8 * 8, 12)

    def test_overlapped_feature_concat_shapes(self):
        spec = build_model("overlapped_subband", k=5, layout=preset_layout(3),
                           concat_variant="concat_f_conv1")
        conv2 = next(l for l in spec.layers if l.name == "conv2")
        assert conv2.in_shape == (49, 24, 5)
        assert spec.param_shapes()["dense/w"] == (49 * 24 * 5, 12)

    def test_overlapped_conv2_concat_shapes(self):
        spec = build_model("overlapped_subband", k=4, layout=preset_layout(3),
                           concat_variant="concat_conv2")
        assert spec.param_shapes()["band1/conv2/w"] == (10, 4, 4, 4)
        assert spec.param_shapes()["dense/w"] == (3 * 49 * 8 * 4, 12)

    def test_full_plus_nonoverlap_shapes(self):
        spec = build_model("full_plus_nonoverlap", k=8, layout=uniform_layout(3, 40, 0))
        # pooled band widths 7 + 7 + 6 match the pooled full width 20
        assert spec.param_shapes()["dense/w"] == (49 * 20 * 16, 12)
        assert spec.param_shapes()["full/conv2/w"] == (10, 4, 8, 8)

    def test_dense_points_shrink_for_every_k(self):
        for k in range(8, 65, 8):
            full = build_model("full_band", k=k)
            over = build_model("overlapped_subband", k=k, layout=preset_layout(3))
            assert over.param_shapes()["dense/w"][0] == 392 * k
            assert full.param_shapes()["dense/w"][0] == 980 * k

    def test_layout_on_full_band_rejected(self):
        with pytest.raises(ValueError):
            build_model("full_band", k=2, layout=preset_layout(3))

    def test_missing_layout_rejected(self):
        with pytest.raises(ValueError):
            build_model("overlapped_subband", k=2)

    def test_variant_on_full_band_rejected(self):
        with pytest.raises(ValueError):
            build_model("full_band", k=2, concat_variant="concat_conv2")

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            build_model("overlapped_subband", k=2, layout=preset_layout(3),
                        concat_variant="concat_everything")

    def test_overlapping_layout_rejected_for_full_plus(self):
        with pytest.raises(ValueError):
            build_model("full_plus_nonoverlap", k=2, layout=preset_layout(3))

    def test_unequal_pooled_widths_rejected_for_channel_concat(self):
        layout = uniform_layout(3, 10, 0)  # widths 4, 4, 2 pool to 2, 2, 1
        with pytest.raises(ValueError, match="equal pooled"):
            build_model("overlapped_subband", k=2, layout=layout, input_shape=(12, 10))

    def test_pooled_width_mismatch_rejected_for_full_plus(self):
        # widths 5, 5 pool to 3 + 3 = 6, but the full tower pools 10 -> 5
        layout = BandLayout(bands=((0, 5), (5, 10)), feature_dim=10)
        with pytest.raises(ValueError, match="pooled"):
            build_model("full_plus_nonoverlap", k=2, layout=layout, input_shape=(12, 10))

    def test_narrow_band_warns(self):
        with pytest.warns(UserWarning, match="narrower"):
            build_model("overlapped_subband", k=2,
                        layout=uniform_layout(3, 10, 1), input_shape=(12, 10))

    def test_bad_k_rejected(self):
        with pytest.raises(ValueError):
            build_model("full_band", k=0)


class TestInitParams:
    def test_shapes_and_values(self):
        spec = build_model("full_band", k=3)
        params = init_params(spec, Rng(0))
        assert set(params) == set(spec.param_shapes())
        for name, shape in spec.param_shapes().items():
            assert params[name].shape == shape
            assert params[name].dtype == np.float32
            if name.endswith("/b"):
                assert not params[name].any()
            else:
                assert (np.abs(params[name]) <= 0.02).all()

    def test_deterministic(self):
        spec = build_model("full_band", k=2)
        a = init_params(spec, Rng(5))
        b = init_params(spec, Rng(5))
        for name in a:
            assert np.array_equal(a[name], b[name])


def _tiny_specs():
    yield build_model("full_band", k=2, input_shape=(12, 10))
    layout = uniform_layout(3, 10, 1)
    for variant in subband.VARIANTS:
        yield build_model("overlapped_subband", k=2, layout=layout,
                          concat_variant=variant, input_shape=(12, 10))
    yield build_model("full_plus_nonoverlap", k=2,
                      layout=uniform_layout(3, 10, 0), input_shape=(12, 10))


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestForward:
    def test_output_shape_every_arch_and_variant(self):
        x = Rng(0).normal((3, 12, 10, 1)).astype(np.float32)
        for spec in _tiny_specs():
            params = init_params(spec, Rng(1))
            assert forward(spec, params, x).shape == (3, 12)

    def test_identical_rows_give_identical_logits(self):
        spec = build_model("overlapped_subband", k=2,
                           layout=uniform_layout(3, 10, 1), input_shape=(12, 10))
        params = init_params(spec, Rng(2))
        row = Rng(3).normal((1, 12, 10, 1)).astype(np.float32)
        x = np.concatenate([row, row], axis=0)
        logits = forward(spec, params, x)
        assert np.array_equal(logits[0], logits[1])

    def test_eval_equals_train_with_zero_dropout(self):
        spec = build_model("full_band", k=2, dropout=0.0, input_shape=(12, 10))
        params = init_params(spec, Rng(4))
        x = Rng(5).normal((2, 12, 10, 1)).astype(np.float32)
        a = forward(spec, params, x, train=False)
        b = forward(spec, params, x, train=True, rng=Rng(6))
        assert np.array_equal(a, b)

    def test_eval_forward_bit_deterministic(self):
        spec = build_model("full_band", k=2, input_shape=(12, 10))
        params = init_params(spec, Rng(7))
        x = Rng(8).normal((2, 12, 10, 1)).astype(np.float32)
        assert np.array_equal(forward(spec, params, x), forward(spec, params, x))

    def test_input_shape_validated(self):
        spec = build_model("full_band", k=2, input_shape=(12, 10))
        params = init_params(spec, Rng(9))
        with pytest.raises(ValueError):
            forward(spec, params, np.zeros((1, 12, 11, 1), dtype=np.float32))


class TestBandEquivalence:
    def test_disjoint_tiling_matches_full_conv_interior(self):
        """Zero-overlap bands with shared kernels reproduce the full-band conv
        away from each band's padding boundary."""
        rng = Rng(10)
        x = rng.normal((2, 9, 12, 1)).astype(np.float64)
        w = rng.normal((3, 3, 1, 2))
        b = rng.normal((2,))
        p = nn.ConvParams(w, b)
        full = nn.conv2d_forward(x, p)
        for lo, hi in ((0, 6), (6, 12)):
            band = nn.conv2d_forward(tensor.slice_feature(x, lo, hi), p)
            # kernel feature extent 3: local columns 1..w-2 see no band padding
            assert np.allclose(band[:, :, 1:-1, :], full[:, :, lo + 1 : hi - 1, :],
                               atol=1e-12)

    def test_band_permutation_symmetry(self):
        """Feeding towers to the join in permuted order while permuting the
        second conv's input-channel blocks leaves the logits unchanged."""
        spec = build_model("overlapped_subband", k=3, layout=preset_layout(3),
                           dropout=0.0)
        params = {k: v.astype(np.float64) for k, v in init_params(spec, Rng(11)).items()}
        x = Rng(12).normal((2, 98, 40, 1))
        baseline = forward(spec, params, x)

        towers = subband.band_tower_outputs(spec, params, x)
        perm = [2, 0, 1]
        joined = tensor.concat([towers[p] for p in perm], "channel")
        w2 = params["conv2/w"]
        blocks = [w2[:, :, 3 * p : 3 * (p + 1), :] for p in perm]
        w2_perm = np.concatenate(blocks, axis=2)
        h = nn.conv2d_forward(joined, nn.ConvParams(w2_perm, params["conv2/b"]))
        u = nn.relu_forward(h)
        flat = u.reshape(2, -1)
        logits = nn.dense_forward(flat, nn.DenseParams(params["dense/w"], params["dense/b"]))
        assert np.allclose(logits, baseline, atol=1e-9)


class TestParameterCounts:
    @pytest.mark.parametrize("k", [2, 8])
    def test_actual_arrays_match_counting_formula(self, k):
        from subbandnet import count_flops

        for spec in (
            build_model("full_band", k=k),
            build_model("overlapped_subband", k=k, layout=preset_layout(3)),
            build_model("full_plus_nonoverlap", k=k, layout=uniform_layout(3, 40, 0)),
        ):
            params = init_params(spec, Rng(0))
            actual = sum(v.size for v in params.values())
            assert actual == count_flops(spec).total_parameters


class TestReceptiveField:
    def test_full_band_pooled_map(self):
        spec = build_model("full_band", k=8)
        assert receptive_field(spec, "pool1") == subband.ReceptiveField(21, 9)

    def test_single_conv_is_its_kernel(self):
        spec = build_model("full_band", k=8)
        assert receptive_field(spec, "conv1") == subband.ReceptiveField(20, 8)

    def test_three_band_channel_concat_triples_feature_axis(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(3))
        assert receptive_field(spec, "concat") == subband.ReceptiveField(21, 27)

    def test_two_band_channel_concat(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(2))
        # windows [0, 9) and [14, 23) are disjoint: 18 bins
        assert receptive_field(spec, "concat") == subband.ReceptiveField(21, 18)

    def test_feature_concat_does_not_widen(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(3),
                           concat_variant="concat_f_conv1")
        assert receptive_field(spec, "concat") == subband.ReceptiveField(21, 9)

    def test_band_tower_pool(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(3))
        assert receptive_field(spec, "band1/pool1") == subband.ReceptiveField(21, 9)

    def test_dense_sees_whole_input(self):
        spec = build_model("full_band", k=8)
        assert receptive_field(spec, "dense") == subband.ReceptiveField(98, 40)

    def test_unknown_layer(self):
        spec = build_model("full_band", k=8)
        with pytest.raises(ValueError):
            receptive_field(spec, "conv7")


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestGradients:
    def test_channel_concat_model(self):
        spec = build_model("overlapped_subband", k=2,
                           layout=uniform_layout(3, 10, 1), input_shape=(12, 10))
        x = Rng(9001).normal((1, 12, 10, 1))
        err = subband.gradient_check(spec, gradcheck_point(spec, 5001), x, 5,
                                     epsilon=3e-5, train_dropout=True, rng=Rng(7001))
        assert err <= 1e-5

    def test_feature_concat_model(self):
        spec = build_model("overlapped_subband", k=2,
                           layout=uniform_layout(3, 10, 1),
                           concat_variant="concat_f_conv1", input_shape=(12, 10))
        x = Rng(9003).normal((1, 12, 10, 1))
        err = subband.gradient_check(spec, gradcheck_point(spec, 5003), x, 5,
                                     epsilon=3e-5, train_dropout=True, rng=Rng(7003))
        assert err <= 1e-5

    def test_per_band_conv2_model(self):
        spec = build_model("overlapped_subband", k=2,
                           layout=uniform_layout(3, 10, 1),
                           concat_variant="concat_conv2", input_shape=(12, 10))
        x = Rng(9001).normal((1, 12, 10, 1))
        err = subband.gradient_check(spec, gradcheck_point(spec, 5001), x, 5,
                                     epsilon=3e-5, train_dropout=True, rng=Rng(7001))
        assert err <= 1e-5

    def test_eval_mode_gradients(self):
        spec = build_model("full_band", k=2, input_shape=(12, 10))
        x = Rng(9001).normal((1, 12, 10, 1))
        err = subband.gradient_check(spec, gradcheck_point(spec, 5001), x, 3,
                                     epsilon=3e-5)
        assert err <= 1e-5

    def test_loss_grads_cover_every_param(self):
        for spec in _tiny_specs():
            params = init_params(spec, Rng(1))
            x = Rng(2).normal((2, 12, 10, 1)).astype(np.float32)
            loss, grads = loss_and_grads(spec, params, x, np.array([0, 1]),
                                         train=True, rng=Rng(3))
            assert loss > 0
            assert set(grads) == set(params)
            for name in params:
                assert grads[name].shape == params[name].shape


class TestSpecSerialization:
    def test_round_trip(self):
        for spec in (
            build_model("full_band", k=8),
            build_model("overlapped_subband", k=4, layout=preset_layout(2),
                        concat_variant="concat_conv2", dropout=0.25),
            build_model("full_plus_nonoverlap", k=3, layout=uniform_layout(3, 40, 0)),
        ):
            text = subband.spec_to_json(spec)
            assert subband.spec_from_json(text) == spec

    def test_schema_tag_checked(self):
        with pytest.raises(ValueError, match="schema"):
            subband.spec_from_json('{"schema": "something/else"}')
