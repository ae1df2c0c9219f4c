import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psgunlearn import data, inner_loop, nn_core, outer_loop
from psgunlearn.errors import InvalidInputError
from psgunlearn.evaluation import accuracy


@pytest.fixture(scope="module")
def forget_setup(blobs, base_model):
    part = data.select_forget(blobs, data.ClassFraction(0, 1.0), seed=0)
    fX, fY = blobs.rows(part.forget)
    rX, rY = blobs.rows(part.remain)
    rel = inner_loop.relabel_forget_set(base_model, fX, fY, inner_loop.InnerConfig(),
                                        indices=part.forget)
    return part, rel, rX, rY


class TestTopK:
    def test_proportional(self):
        t, fallback = outer_loop.topk_soft_target([4.0, 3.0, 2.0, 1.0], 3)
        np.testing.assert_allclose(t, [4 / 9, 3 / 9, 2 / 9, 0.0], rtol=1e-15)
        assert not fallback

    def test_full_k(self):
        z = np.array([1.0, 2.0, 5.0])
        t, _ = outer_loop.topk_soft_target(z, 3)
        np.testing.assert_allclose(t, z / z.sum())

    def test_negative_sum_falls_back_to_softmax(self):
        t, fallback = outer_loop.topk_soft_target([1.0, -1.0, -2.0, -3.0], 3)
        e = np.exp([1.0, -1.0, -2.0])
        np.testing.assert_allclose(t[:3], e / e.sum(), rtol=1e-12)
        np.testing.assert_allclose(t, [0.8438, 0.1142, 0.0420, 0.0], atol=1e-4)
        assert t[3] == 0.0 and fallback

    def test_mixed_sign_positive_sum_falls_back(self):
        t, fallback = outer_loop.topk_soft_target([3.0, 1.0, -0.5], 3)
        assert fallback and np.all(t >= 0)

    def test_ties_keep_lower_index(self):
        t, _ = outer_loop.topk_soft_target([1.0, 2.0, 2.0, 2.0], 2)
        np.testing.assert_allclose(t, [0.0, 0.5, 0.5, 0.0])

    def test_k_out_of_range(self):
        with pytest.raises(InvalidInputError):
            outer_loop.topk_soft_target([1.0, 2.0], 3)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.integers(1, 8))
    def test_always_a_distribution(self, z, k):
        k = min(k, len(z))
        t, _ = outer_loop.topk_soft_target(z, k)
        assert abs(t.sum() - 1) < 1e-12 and np.all(t >= 0)
        assert np.count_nonzero(t) <= k


class TestUnlearn:
    def test_zero_epochs_is_noop(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        out = outer_loop.unlearn(base_model, rel, rX, rY, outer_loop.OuterConfig(epochs=0))
        assert out.flat_params().tobytes() == base_model.flat_params().tobytes()

    def test_zero_phi_matches_no_remain_loss(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        a = outer_loop.unlearn(base_model, rel, rX, rY, outer_loop.OuterConfig(remain_loss=False))
        b = outer_loop.unlearn(base_model, rel, rX, rY,
                               outer_loop.OuterConfig(remain_loss=True, phi=0.0))
        np.testing.assert_array_equal(a.flat_params(), b.flat_params())

    def test_remain_onset_delays_remain_loss(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        hist = []
        cfg = outer_loop.OuterConfig(epochs=4, remain_loss=True, phi=0.5, remain_onset=3)
        outer_loop.unlearn(base_model, rel, rX, rY, cfg, history=hist)
        assert [h.remain_loss is None for h in hist] == [True, True, False, False]

    def test_onset_after_last_epoch_rejected(self):
        with pytest.raises(InvalidInputError):
            outer_loop.OuterConfig(epochs=2, remain_loss=True, remain_onset=3)

    def test_deterministic(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        cfg = outer_loop.OuterConfig(seed=4, remain_loss=True)
        a = outer_loop.unlearn(base_model, rel, rX, rY, cfg)
        b = outer_loop.unlearn(base_model, rel, rX, rY, cfg)
        assert a.flat_params().tobytes() == b.flat_params().tobytes()

    def test_original_model_untouched(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        before = base_model.flat_params().copy()
        outer_loop.unlearn(base_model, rel, rX, rY, outer_loop.OuterConfig())
        np.testing.assert_array_equal(base_model.flat_params(), before)

    def test_forgets_class_and_keeps_rest(self, blobs, base_model, forget_setup):
        part, rel, rX, rY = forget_setup
        out = outer_loop.unlearn(base_model, rel, rX, rY, outer_loop.OuterConfig())
        assert accuracy(out, *blobs.rows(part.forget_test)) <= 0.15
        assert accuracy(out, *blobs.rows(part.remain_test)) >= 0.85

    def test_soft_labels_train_and_count_fallbacks(self, base_model, forget_setup):
        _, rel, rX, rY = forget_setup
        cfg = outer_loop.OuterConfig(soft_labels=True, k=3)
        targets, n_fallback = outer_loop.forget_targets(base_model, rel, cfg)
        np.testing.assert_allclose(targets.sum(axis=1), 1.0)
        assert 0 <= n_fallback <= len(rel)
        out = outer_loop.unlearn(base_model, rel, rX, rY, cfg)
        assert np.all(np.isfinite(out.flat_params()))

    def test_soft_k_above_classes(self, base_model, forget_setup):
        _, rel, _, _ = forget_setup
        with pytest.raises(InvalidInputError):
            outer_loop.forget_targets(base_model, rel, outer_loop.OuterConfig(soft_labels=True, k=5))

    def test_history_csv(self, base_model, forget_setup, tmp_path):
        _, rel, rX, rY = forget_setup
        hist = []
        outer_loop.unlearn(base_model, rel, rX, rY, outer_loop.OuterConfig(epochs=2), history=hist)
        path = tmp_path / "log.csv"
        outer_loop.write_history_csv(hist, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("epoch,forget_loss") and len(lines) == 3
        assert all(math.isfinite(h.forget_loss) for h in hist)
