import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nn2lut.dataset import make_blobs, split, standardize
from nn2lut.pruning import (FcpConfig, admm_fcp, apply_gradual_fcp,
                            check_feasible, gradual_keep_count, masks_feasible,
                            project_rows, topk_mask)
from nn2lut.qnn import ActivationSpec, evaluate, init_network
from nn2lut.training import Hyper, train


class TestTopkMask:
    def test_top2_magnitudes(self):
        assert topk_mask(np.array([0.5, -0.9, 0.1, 0.3]), 2).tolist() == [1, 1, 0, 0]

    def test_tie_goes_to_lower_index(self):
        assert topk_mask(np.array([0.5, 0.5]), 1).tolist() == [1, 0]

    def test_zero_budget(self):
        assert topk_mask(np.array([1.0, 2.0]), 0).tolist() == [0, 0]

    def test_budget_at_least_length(self):
        assert topk_mask(np.array([1.0, 2.0]), 5).tolist() == [1, 1]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=12),
           st.integers(0, 12), st.floats(0.01, 100.0))
    def test_scale_invariant(self, row, keep, scale):
        row = np.array(row)
        assert np.array_equal(topk_mask(row, keep), topk_mask(scale * row, keep))


class TestGradualSchedule:
    def test_before_start_keeps_everything(self):
        assert gradual_keep_count(0, 16, 4, t0=10, duration=100) == 16
        assert gradual_keep_count(10, 16, 4, t0=10, duration=100) == 16

    def test_after_end_keeps_budget(self):
        assert gradual_keep_count(110, 16, 4, t0=10, duration=100) == 4
        assert gradual_keep_count(10**6, 16, 4, t0=10, duration=100) == 4

    def test_halfway_cubic_value(self):
        # s_f = 1 - 4/16 = 0.75; s(0.5) = 0.75 * (1 - 0.125) = 0.65625
        # keep = round(16 * 0.34375) = round(5.5) -> 6 (half away from zero)
        assert gradual_keep_count(60, 16, 4, t0=10, duration=100) == 6

    def test_monotone_non_increasing(self):
        keeps = [gradual_keep_count(t, 16, 4, t0=5, duration=50) for t in range(80)]
        assert all(a >= b for a, b in zip(keeps, keeps[1:]))
        assert all(4 <= k <= 16 for k in keeps)

    def test_vacuous_budget(self):
        assert gradual_keep_count(50, 8, 8, t0=0, duration=10) == 8


def blob_setup(features=4, classes=2, hidden=8, seed=50, spread=0.6):
    raw = make_blobs(samples=500, features=features, classes=classes,
                     spread=spread, seed=seed)
    tr_raw, te_raw = split(raw, 0.75, seed=seed + 1)
    (tr, te), _ = standardize(tr_raw, [te_raw])
    net = init_network(features, [hidden, classes], ActivationSpec("bipolar"),
                       [ActivationSpec("bipolar")], num_classes=classes,
                       batchnorm=True, seed=seed + 2)
    return tr, te, net


class TestGradualFcp:
    def test_vacuous_budget_equals_plain_training(self):
        tr, te, net = blob_setup()
        hyper = Hyper(lr=0.02, epochs=4, batch_size=32, seed=60)
        cfg = FcpConfig(fanin=8, method="gradual", start_step=2, duration=20,
                        prune_every=2, fine_tune_epochs=0)
        plain, _ = train(net, tr, te, hyper)
        pruned, _ = apply_gradual_fcp(net, tr, te, cfg, hyper)
        for a, b in zip(plain.layers, pruned.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
            assert np.all(b.mask == 1.0)

    def test_budget_satisfied_after_completion(self):
        tr, te, net = blob_setup()
        cfg = FcpConfig(fanin=2, method="gradual", start_step=4, duration=40,
                        prune_every=4, fine_tune_epochs=2)
        hyper = Hyper(lr=0.02, epochs=6, batch_size=32, seed=61)
        pruned, _ = apply_gradual_fcp(net, tr, te, cfg, hyper)
        for layer in pruned.layers:
            assert int(layer.mask.sum(axis=1).max()) <= 2
            # pruned weights really are zero
            assert np.all(layer.weights[layer.mask == 0.0] == 0.0)

    def test_accuracy_within_five_points_of_unpruned(self):
        # regression baseline: seed 50 task, unpruned 1.000 / pruned 1.000
        tr, te, net = blob_setup()
        hyper = Hyper(lr=0.02, epochs=8, batch_size=32, seed=62)
        unpruned, _ = train(net, tr, te, hyper)
        cfg = FcpConfig(fanin=2, method="gradual", start_step=10, duration=60,
                        prune_every=5, fine_tune_epochs=4)
        pruned, _ = apply_gradual_fcp(net, tr, te, cfg, hyper)
        drop = evaluate(unpruned, te) - evaluate(pruned, te)
        assert drop <= 0.05

    def test_infeasible_budget_rejected_before_work(self):
        tr, te, net = blob_setup()
        net2 = init_network(4, [8, 2], ActivationSpec("signed", 4, 2.0),
                            [ActivationSpec("pact", 4, 2.0)], num_classes=2,
                            batchnorm=False, seed=1)
        cfg = FcpConfig(fanin=6, method="gradual", start_step=1, duration=10,
                        prune_every=1)
        with pytest.raises(ValueError, match="layer 0.*24 table inputs"):
            apply_gradual_fcp(net2, tr, te, cfg, Hyper(epochs=1, seed=2),
                              max_table_inputs=20)


class TestAdmm:
    def test_projection_keeps_top1(self):
        z = project_rows(np.array([[0.2, -1.0, 0.4]]), 1)
        assert z.tolist() == [[0.0, -1.0, 0.0]]

    def test_u_update_fixed_point_at_zero_residual(self):
        # U <- U + (W - Z) is exactly unchanged when W == Z
        w = np.array([[1.0, 0.0], [0.0, 2.0]])
        u = np.array([[0.3, -0.1], [0.2, 0.0]])
        u2 = u + (w - w)
        assert np.array_equal(u, u2)

    def test_large_rho_aligns_support_after_one_round(self):
        tr, te, net = blob_setup(features=3, hidden=2, seed=70)
        cfg = FcpConfig(fanin=1, method="admm", rho=1e3, admm_steps=1,
                        epochs_per_round=2, fine_tune_epochs=0)
        _, _, info = admm_fcp(net, tr, te, cfg, Hyper(lr=0.01, epochs=1,
                                                      batch_size=32, seed=71))
        assert info.support_agreement == 1.0

    def test_budget_and_residual_trend(self):
        tr, te, net = blob_setup(seed=80)
        cfg = FcpConfig(fanin=2, method="admm", rho=0.5, admm_steps=8,
                        epochs_per_round=2, fine_tune_epochs=2)
        pruned, _, info = admm_fcp(net, tr, te, cfg,
                                   Hyper(lr=0.02, epochs=1, batch_size=32, seed=81))
        for layer in pruned.layers:
            assert int(layer.mask.sum(axis=1).max()) <= 2
        tail = info.residuals[len(info.residuals) // 2:]
        assert all(a >= b - 1e-12 for a, b in zip(tail, tail[1:])), info.residuals


class TestFeasibility:
    def test_named_layer_in_error(self):
        net = init_network(6, [6, 2], ActivationSpec("bipolar"),
                           [ActivationSpec("pact", 4, 1.0)], num_classes=2,
                           batchnorm=False, seed=0)
        with pytest.raises(ValueError, match="layer 1"):
            check_feasible(net, fanin=4, max_table_inputs=12)

    def test_feasible_passes(self):
        net = init_network(6, [6, 2], ActivationSpec("bipolar"),
                           [ActivationSpec("pact", 2, 1.0)], num_classes=2,
                           batchnorm=False, seed=0)
        check_feasible(net, fanin=4, max_table_inputs=12)
        assert masks_feasible(net, 6)
