import copy
import json

import numpy as np
import pytest

from conftest import and_network, manual_network
from nn2lut.dataset import Dataset
from nn2lut.qnn import (ActivationSpec, BatchNorm, OutputQuant, QuantLayer,
                        QuantNetwork, calibrate_output_quant, evaluate,
                        fingerprint, fold_batchnorm, fold_network, forward,
                        forward_batch, init_network, load_checkpoint,
                        pact_quantize, round_half_away, save_checkpoint,
                        sign_activation, signed_quantize)


class TestRounding:
    def test_half_away_from_zero(self):
        # numpy's round() would give 0, 2, 2 for the first three
        assert round_half_away(0.5) == 1.0
        assert round_half_away(1.5) == 2.0
        assert round_half_away(2.5) == 3.0
        assert round_half_away(-0.5) == -1.0
        assert round_half_away(-2.5) == -3.0
        assert round_half_away(0.49) == 0.0


class TestSign:
    def test_zero_tie_goes_positive(self):
        assert sign_activation(0.0) == 1

    def test_negative(self):
        assert sign_activation(-0.3) == -1

    def test_positive(self):
        assert sign_activation(2.5) == 1


class TestPactQuantize:
    def test_clip_below_zero(self):
        assert pact_quantize(-0.5, alpha=2.0, bits=2) == 0

    def test_clip_above_alpha(self):
        assert pact_quantize(2.9, alpha=2.0, bits=2) == 3

    def test_tie_rounds_away_from_zero(self):
        # y=1.0, level = round(1.0 * 3 / 2) = round(1.5) -> 2
        assert pact_quantize(1.0, alpha=2.0, bits=2) == 2

    def test_level_range(self):
        xs = np.linspace(-3, 3, 101)
        levels = pact_quantize(xs, alpha=1.3, bits=3)
        assert levels.min() >= 0 and levels.max() <= 7


class TestSignedQuantize:
    def test_symmetric_endpoints(self):
        assert signed_quantize(-5.0, alpha=1.0, bits=2) == 0
        assert signed_quantize(5.0, alpha=1.0, bits=2) == 3

    def test_midpoint_tie(self):
        # (0 + 1) * 3 / 2 = 1.5 -> 2 (away from zero)
        assert signed_quantize(0.0, alpha=1.0, bits=2) == 2

    def test_dequantize_inverse_on_levels(self):
        spec = ActivationSpec("signed", bits=3, alpha=1.7)
        levels = np.arange(8)
        vals = spec.dequantize(levels)
        assert np.array_equal(spec.quantize(vals), levels)


class TestFoldBatchnorm:
    def make_layer(self, gamma, beta, mean, var, eps=0.0, weights=None, bias=None):
        w = np.asarray(weights if weights is not None else [[1.0, 2.0]])
        b = np.asarray(bias if bias is not None else [0.5])
        bn = BatchNorm(gamma=np.array([gamma]), beta=np.array([beta]),
                       running_mean=np.array([mean]), running_var=np.array([var]),
                       eps=eps)
        return QuantLayer(weights=w, bias=b, mask=np.ones_like(w),
                          activation=ActivationSpec("bipolar"), bn=bn)

    def test_identity_fold(self):
        layer = self.make_layer(1.0, 0.0, 0.0, 1.0)
        folded = fold_batchnorm(layer)
        assert np.array_equal(folded.weights, layer.weights)
        assert np.array_equal(folded.bias, layer.bias)
        assert folded.bn is None

    def test_scale_cancels(self):
        # s = gamma / sqrt(var) = 2 / 2 = 1
        layer = self.make_layer(2.0, 0.0, 0.0, 4.0)
        folded = fold_batchnorm(layer)
        assert np.array_equal(folded.weights, layer.weights)

    def test_mean_moves_bias(self):
        layer = self.make_layer(1.0, 0.0, 1.0, 1.0, bias=[0.0])
        folded = fold_batchnorm(layer)
        assert folded.bias[0] == -1.0

    def test_missing_bn_rejected(self):
        layer = QuantLayer(weights=np.ones((1, 2)), bias=np.zeros(1),
                           mask=np.ones((1, 2)), activation=None, bn=None)
        with pytest.raises(ValueError, match="no batch-norm"):
            fold_batchnorm(layer)

    def test_non_finite_rejected(self):
        layer = self.make_layer(np.inf, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="non-finite"):
            fold_batchnorm(layer)

    def test_forward_preserved_on_random_inputs(self):
        rng = np.random.default_rng(0)
        net = init_network(6, [5, 3], ActivationSpec("signed", 2, 2.0),
                           [ActivationSpec("pact", 2, 1.5)], num_classes=3,
                           batchnorm=True, seed=1)
        layer = net.layers[0]
        layer.bn.gamma = rng.uniform(0.5, 2.0, 5)
        layer.bn.beta = rng.normal(0, 0.5, 5)
        layer.bn.running_mean = rng.normal(0, 1, 5)
        layer.bn.running_var = rng.uniform(0.2, 3.0, 5)
        folded = fold_network(net)
        x = rng.standard_normal((1000, 6))
        xhat = net.input_quant.dequantize(net.input_quant.quantize(x))
        from nn2lut.qnn import layer_preact
        z_raw = layer.bn.apply_running(layer_preact(xhat, layer.effective_weights(), layer.bias))
        z_fold = layer_preact(xhat, folded.layers[0].effective_weights(), folded.layers[0].bias)
        rel = np.abs(z_fold - z_raw) / np.maximum(np.abs(z_raw), 1e-12)
        assert np.max(rel) < 1e-9


class TestForward:
    def test_and_gate_pre_activation(self):
        net = and_network()
        cls, levels = forward(net, np.array([1.0, 1.0]))
        assert levels[0].tolist() == [1, 1]
        assert levels[1].tolist() == [1]  # 1.5 >= 0 -> +1

    def test_and_gate_negative_side(self):
        net = and_network()
        _, levels = forward(net, np.array([-1.0, 1.0]))
        assert levels[1].tolist() == [-1]  # -0.5 -> -1

    def test_zero_weight_network_argmax_of_bias(self):
        net = manual_network(np.zeros((3, 2)), [0.1, 0.7, 0.7],
                             ActivationSpec("bipolar"), None, num_classes=3)
        cls, _ = forward(net, np.array([0.3, -0.4]))
        assert cls == 1  # tie between classes 1 and 2 -> lowest index

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="width"):
            forward(and_network(), np.array([1.0, 1.0, 1.0]))

    def test_levels_stay_in_range(self):
        net = init_network(5, [7, 4], ActivationSpec("signed", 2, 2.0),
                           [ActivationSpec("pact", 3, 1.0)], num_classes=4,
                           batchnorm=False, seed=3)
        net.output_quant = OutputQuant(bits=8, scale=2.0)
        x = np.random.default_rng(0).standard_normal((500, 5))
        _, levels = forward_batch(net, x)
        assert levels[0].min() >= 0 and levels[0].max() <= 3
        assert levels[1].min() >= 0 and levels[1].max() <= 7
        assert levels[2].min() >= -127 and levels[2].max() <= 127

    def test_batch_matches_single(self):
        net = init_network(4, [6, 3], ActivationSpec("bipolar"),
                           [ActivationSpec("pact", 2, 2.0)], num_classes=3,
                           batchnorm=False, seed=5)
        x = np.random.default_rng(1).standard_normal((32, 4))
        classes, _ = forward_batch(net, x)
        for i in range(32):
            cls, _ = forward(net, x[i])
            assert cls == classes[i]


class TestEvaluate:
    def test_constant_predictor_half_right(self):
        net = manual_network(np.zeros((2, 2)), [1.0, 0.0],
                             ActivationSpec("bipolar"), None, num_classes=2)
        data = Dataset(np.zeros((4, 2)), np.array([0, 0, 1, 1]), 2)
        assert evaluate(net, data) == 0.5

    def test_empty_dataset_rejected(self):
        data = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        with pytest.raises(ValueError, match="empty"):
            evaluate(and_network(), data)


class TestCalibration:
    def test_scale_is_max_abs_score(self):
        net = manual_network([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0],
                             ActivationSpec("bipolar"), None, num_classes=2)
        cal = calibrate_output_quant(net, np.array([[0.5, -2.0], [1.0, 1.0]]), bits=8)
        # bipolar inputs are +/-1, scores are +/-1 -> max |score| = 1
        assert cal.output_quant.scale == 1.0
        assert cal.output_quant.bits == 8


class TestCheckpoint:
    def build(self):
        net = init_network(4, [5, 3], ActivationSpec("signed", 2, 1.8),
                           [ActivationSpec("pact", 2, 1.2)], num_classes=3,
                           batchnorm=True, seed=9)
        net.output_quant = OutputQuant(bits=8, scale=3.25)
        net.seed = 9
        return net

    def test_round_trip_bytes_identical(self, tmp_path):
        net = self.build()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(net, str(p1))
        loaded, _ = load_checkpoint(str(p1))
        save_checkpoint(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_survive(self, tmp_path):
        net = self.build()
        path = tmp_path / "c.json"
        save_checkpoint(net, str(path))
        loaded, _ = load_checkpoint(str(path))
        for a, b in zip(net.layers, loaded.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.mask, b.mask)
            assert (a.bn is None) == (b.bn is None)
            if a.bn is not None:
                assert np.array_equal(a.bn.running_var, b.bn.running_var)
        assert loaded.output_quant.scale == net.output_quant.scale
        assert loaded.seed == 9

    def test_fingerprint_tracks_parameters(self, tmp_path):
        net = self.build()
        fp1 = fingerprint(net)
        other = net.copy()
        other.layers[0].weights[0, 0] += 1e-9
        assert fingerprint(other) != fp1
        assert fingerprint(net) == fp1

    def test_stats_round_trip(self, tmp_path):
        from nn2lut.dataset import FeatureStats
        net = self.build()
        stats = FeatureStats(mean=np.array([1.0, 2.0, 3.0, 4.0]),
                             std=np.array([1.0, 0.5, 2.0, 1.5]))
        path = tmp_path / "d.json"
        save_checkpoint(net, str(path), stats)
        _, got = load_checkpoint(str(path))
        assert np.array_equal(got.mean, stats.mean)
        assert np.array_equal(got.std, stats.std)
