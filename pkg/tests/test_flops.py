import csv
import io
from fractions import Fraction

import pytest

from subbandnet import (
    build_model,
    count_flops,
    flops_reduction,
    multiplications_total,
    preset_layout,
    uniform_layout,
)
from subbandnet.flops import _layer_cost
from subbandnet.subband import LayerSpec

K_SWEEP = (8, 16, 24, 32, 40, 48, 56, 64)


def _specs(k):
    return {
        "full_band": build_model("full_band", k=k),
        "overlapped_subband": build_model("overlapped_subband", k=k,
                                          layout=preset_layout(3)),
        "full_plus_nonoverlap": build_model("full_plus_nonoverlap", k=k,
                                            layout=uniform_layout(3, 40, 0)),
    }


class TestLayerFormulas:
    def test_dense_layer_at_k8(self):
        report = count_flops(build_model("full_band", k=8))
        dense = report.layer("dense")
        assert dense.multiplications == 94_080
        assert dense.flops == 188_172
        assert dense.parameters == 94_092

    def test_relu_counts_one_per_element(self):
        report = count_flops(build_model("full_band", k=8))
        relu = report.layer("relu1")
        assert relu.flops == 98 * 40 * 8 == 31_360
        assert relu.multiplications == 0

    def test_single_mac_conv(self):
        layer = LayerSpec(name="c", kind="conv", in_shape=(1, 1, 1),
                          out_shape=(1, 1, 1), kernel=(1, 1), stride=(1, 1))
        cost = _layer_cost(layer)
        assert cost.multiplications == 1
        assert cost.flops == 3  # multiply, add into the sum, bias add
        assert cost.parameters == 2

    def test_maxpool_three_comparisons_per_output(self):
        report = count_flops(build_model("full_band", k=8))
        assert report.layer("pool1").flops == 49 * 20 * 8 * 3

    def test_dropout_concat_free(self):
        report = count_flops(build_model("overlapped_subband", k=8,
                                         layout=preset_layout(3)))
        for name in ("drop2", "band0/drop1", "concat", "flatten"):
            cost = report.layer(name)
            assert cost.flops == 0 and cost.multiplications == 0


class TestReportInvariants:
    @pytest.mark.parametrize("k", [2, 8, 64])
    def test_totals_are_sums(self, k):
        for spec in _specs(k).values():
            r = count_flops(spec)
            assert r.total_flops == sum(c.flops for c in r.per_layer)
            assert r.total_multiplications == sum(c.multiplications for c in r.per_layer)
            assert r.total_parameters == sum(c.parameters for c in r.per_layer)

    def test_multiplications_never_exceed_flops(self):
        for spec in _specs(8).values():
            for c in count_flops(spec).per_layer:
                assert c.multiplications <= c.flops

    def test_counts_are_exact_integers(self):
        r = count_flops(build_model("full_band", k=8))
        for c in r.per_layer:
            assert isinstance(c.flops, int)
            assert isinstance(c.multiplications, int)
        r2 = count_flops(build_model("full_band", k=8))
        assert r.per_layer == r2.per_layer

    def test_strictly_increasing_in_k(self):
        for arch in ("full_band", "overlapped_subband", "full_plus_nonoverlap"):
            totals = [count_flops(_specs(k)[arch]).total_flops for k in K_SWEEP]
            assert all(a < b for a, b in zip(totals, totals[1:]))

    def test_input_shape_validated(self):
        spec = build_model("full_band", k=2)
        with pytest.raises(ValueError):
            count_flops(spec, input_shape=(2, 98, 40, 1))


class TestArchComparisons:
    def test_dense_layer_ratio_is_exactly_8_over_20(self):
        for k in K_SWEEP:
            over = count_flops(_specs(k)["overlapped_subband"]).layer("dense")
            full = count_flops(_specs(k)["full_band"]).layer("dense")
            assert Fraction(over.multiplications, full.multiplications) == Fraction(8, 20)

    def test_multiplication_share_of_flops(self):
        # one multiply-add pair dominates every model: mult/flops just below 1/2
        for k in K_SWEEP:
            for spec in _specs(k).values():
                r = count_flops(spec)
                ratio = r.total_multiplications / r.total_flops
                assert 0.4 < ratio < 0.6

    def test_total_ordering_between_archs(self):
        # The channel join triples conv2's input channels and the overlap adds
        # conv1 positions, which outweighs the dense-layer savings at equal K:
        # the overlapped model costs more in total than the plain full-band
        # model, and the four-tower model costs the most.
        for k in K_SWEEP:
            specs = _specs(k)
            full = count_flops(specs["full_band"]).total_flops
            over = count_flops(specs["overlapped_subband"]).total_flops
            plus = count_flops(specs["full_plus_nonoverlap"]).total_flops
            assert over < plus
            assert full < over

    def test_dense_flops_strictly_fewer_for_overlapped(self):
        for k in K_SWEEP:
            over = count_flops(_specs(k)["overlapped_subband"]).layer("dense")
            full = count_flops(_specs(k)["full_band"]).layer("dense")
            assert over.flops < full.flops


class TestReduction:
    def test_identical_specs_zero(self):
        spec = build_model("full_band", k=8)
        assert flops_reduction(spec, spec) == 0.0

    def test_doubling_k_is_negative(self):
        assert flops_reduction(build_model("full_band", k=8),
                               build_model("full_band", k=16)) < 0.0

    def test_input_mismatch_rejected(self):
        a = build_model("full_band", k=2)
        b = build_model("full_band", k=2, input_shape=(12, 10))
        with pytest.raises(ValueError):
            flops_reduction(a, b)


class TestOutputs:
    def test_multiplications_total_matches_report(self):
        spec = build_model("overlapped_subband", k=8, layout=preset_layout(3))
        assert multiplications_total(spec) == count_flops(spec).total_multiplications

    def test_csv_schema_and_columns(self):
        report = count_flops(build_model("full_band", k=2))
        text = report.to_csv()
        lines = text.splitlines()
        assert lines[0] == "# schema: subbandnet.flops.v1"
        rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
        assert list(rows[0]) == ["layer", "name", "flops", "mult", "params"]
        total = rows[-1]
        assert total["layer"] == "total"
        assert int(total["flops"]) == report.total_flops

    def test_str_contains_totals(self):
        report = count_flops(build_model("full_band", k=2))
        assert str(report.total_flops) in str(report)

    def test_layer_lookup_unknown(self):
        report = count_flops(build_model("full_band", k=2))
        with pytest.raises(KeyError):
            report.layer("nonexistent")
