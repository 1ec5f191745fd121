from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import finite_difference_gradients

from latefuse.fusion import (
    FusionClassifier,
    OneCycleSchedule,
    PrototypeScorer,
    bce_loss,
    lr_at,
    p2sgrad_gradient,
    p2sgrad_loss,
    softmax_probabilities,
)


def fitted(X, y, **kw):
    kw.setdefault("random_state", 0)
    return FusionClassifier(**kw).fit(X, y)


def separable_data(rng, n=400, dim=8):
    """Fused frames whose second coordinate already encodes the label."""
    y = (rng.random(n) < 0.4).astype(int)
    x = rng.normal(0, 0.3, size=(n, dim))
    x[:, 1] += np.where(y == 1, 2.0, -2.0)
    return x, y


class TestForward:
    def test_zero_model_is_uniform(self):
        clf = FusionClassifier(total_steps=0).fit(*separable_data(np.random.default_rng(0)))
        clf.weights_ = np.zeros_like(clf.weights_)
        clf.bias_ = np.zeros_like(clf.bias_)
        probs = clf.predict_proba(np.zeros((3, 8)))
        assert np.allclose(probs, 0.5)

    def test_bias_only_closed_form(self):
        clf = FusionClassifier(total_steps=0).fit(*separable_data(np.random.default_rng(0)))
        clf.weights_ = np.zeros_like(clf.weights_)
        clf.bias_ = np.array([0.0, 10.0])
        probs = clf.predict_proba(np.zeros((1, 8)))
        assert probs[0, 1] == pytest.approx(1.0 / (1.0 + math.exp(-10)), abs=1e-12)

    def test_row_permutation_swaps_outputs(self, rng):
        clf = FusionClassifier(total_steps=0).fit(*separable_data(rng))
        x = rng.normal(size=(5, 8))
        p = clf.predict_proba(x)
        clf.weights_ = clf.weights_[::-1].copy()
        clf.bias_ = clf.bias_[::-1].copy()
        q = clf.predict_proba(x)
        assert np.allclose(p, q[:, ::-1])

    def test_outputs_are_distributions(self, rng):
        clf = fitted(*separable_data(rng), total_steps=50)
        probs = clf.predict_proba(rng.normal(size=(100, 8)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs > 0)

    def test_bias_shift_invariance(self, rng):
        clf = fitted(*separable_data(rng), total_steps=50)
        x = rng.normal(size=(10, 8))
        p = clf.predict_proba(x)
        clf.bias_ = clf.bias_ + 3.7
        assert np.allclose(clf.predict_proba(x), p, atol=1e-12)

    def test_dimension_mismatch_rejected(self, rng):
        clf = fitted(*separable_data(rng), total_steps=10)
        with pytest.raises(ValueError, match="frames"):
            clf.predict_proba(np.zeros((2, 5)))

    def test_nonfinite_input_rejected(self, rng):
        clf = fitted(*separable_data(rng), total_steps=10)
        bad = np.zeros((2, 8))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            clf.predict_proba(bad)


class TestBceLoss:
    def test_perfect_predictions_vanish(self):
        preds = np.array([[1e-15, 1 - 1e-15], [1 - 1e-15, 1e-15]])
        assert bce_loss(preds, [1, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_is_ln2(self):
        preds = np.full((7, 2), 0.5)
        assert bce_loss(preds, [0, 1, 0, 1, 0, 1, 0]) == pytest.approx(math.log(2), abs=1e-12)

    def test_hand_evaluated_value(self):
        assert bce_loss([[0.9, 0.1]], [1]) == pytest.approx(2.302585092994046, abs=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="lengths"):
            bce_loss([[0.5, 0.5]], [0, 1])

    def test_pos_weight_reweights(self):
        preds = np.array([[0.9, 0.1], [0.1, 0.9]])
        plain = bce_loss(preds, [1, 0])
        weighted = bce_loss(preds, [1, 0], pos_weight=3.0)
        # both tokens have loss -ln 0.1; weighting cannot change a constant
        assert weighted == pytest.approx(plain, abs=1e-12)
        mixed = np.array([[0.9, 0.1], [0.5, 0.5]])
        assert bce_loss(mixed, [1, 0], pos_weight=3.0) > bce_loss(mixed, [1, 0])


class TestTraining:
    def test_separable_data_high_accuracy(self, rng):
        x, y = separable_data(rng)
        clf = fitted(x, y, max_lr=0.5, total_steps=300)
        assert (clf.predict(x) == y).mean() >= 0.99
        assert clf.final_loss_ <= 0.1 * clf.initial_loss_

    def test_zero_budget_returns_initialized_model(self):
        x, y = separable_data(np.random.default_rng(3))
        clf = fitted(x, y, total_steps=0, random_state=11)
        rng = np.random.default_rng(11)
        expected = rng.uniform(-1 / math.sqrt(8), 1 / math.sqrt(8), size=(2, 8))
        assert np.array_equal(clf.weights_, expected)
        assert np.array_equal(clf.bias_, np.zeros(2))
        assert clf.final_loss_ == clf.initial_loss_

    def test_same_seed_bit_identical(self, rng):
        x, y = separable_data(rng)
        groups = np.repeat(np.arange(20), len(x) // 20)
        a = fitted(x, y, total_steps=100, random_state=5)
        b = fitted(x, y, total_steps=100, random_state=5)
        assert np.array_equal(a.weights_, b.weights_) and np.array_equal(a.bias_, b.bias_)
        c = FusionClassifier(total_steps=100, random_state=5).fit(x, y, groups=groups)
        d = FusionClassifier(total_steps=100, random_state=5).fit(x, y, groups=groups)
        assert np.array_equal(c.weights_, d.weights_)

    def test_single_class_rejected(self):
        x = np.zeros((10, 4))
        with pytest.raises(ValueError, match="single class"):
            FusionClassifier().fit(x, np.zeros(10, dtype=int))

    def test_nan_loss_aborts_with_diagnostic(self):
        x = np.array([[1e308, -1e308], [-1e308, 1e308], [1e308, 1e308], [-1e308, -1e308]])
        y = np.array([1, 0, 1, 0])
        with pytest.raises(FloatingPointError, match="non-finite training loss"):
            with np.errstate(all="ignore"):
                FusionClassifier(total_steps=5).fit(x, y)

    def test_loss_curve_finite_per_epoch(self, rng):
        x, y = separable_data(rng)
        groups = np.repeat(np.arange(10), len(x) // 10)
        clf = FusionClassifier(total_steps=40, random_state=2).fit(x, y, groups=groups)
        assert len(clf.loss_curve_) == 4
        assert all(math.isfinite(v) for v in clf.loss_curve_)

    def test_one_cycle_beats_constant_on_bundled_benchmark(self):
        # bundled benchmark config, small scale: same budget and seed
        from latefuse.align import align_video
        from latefuse.synthgen import ScenarioConfig, generate
        from latefuse.timeline import rasterize_labels

        cfg = ScenarioConfig(num_videos=60, seed=3, window_len_frames=4)
        gts, streams = generate(cfg)
        by_vid = {}
        for s in streams:
            by_vid.setdefault(s.video_id, []).append(s)
        fused = [align_video(by_vid[g.video_id], g) for g in gts]
        gt_map = {g.video_id: g for g in gts}
        x = np.vstack([f.frames for f in fused])
        y = np.concatenate([rasterize_labels(gt_map[f.video_id], f.grid) for f in fused])
        groups = np.concatenate([[f.video_id] * len(f.frames) for f in fused])
        one_cycle = FusionClassifier(
            max_lr=0.5, total_steps=600, schedule="one_cycle", random_state=5
        ).fit(x, y, groups=groups)
        constant = FusionClassifier(
            max_lr=0.5, total_steps=600, schedule="constant", random_state=5
        ).fit(x, y, groups=groups)
        assert one_cycle.final_loss_ <= constant.final_loss_

    def test_get_params_supports_cloning(self):
        clf = FusionClassifier(max_lr=0.7, total_steps=123, pos_weight=2.0)
        clone = FusionClassifier(**clf.get_params())
        assert clone.max_lr == 0.7 and clone.total_steps == 123 and clone.pos_weight == 2.0


class TestOneCycleSchedule:
    def test_phase_endpoints_exact(self):
        sched = OneCycleSchedule(total_steps=100, max_lr=1.0)
        assert lr_at(sched, 0) == 1.0 / 25.0
        assert lr_at(sched, sched.peak_step) == 1.0
        assert lr_at(sched, 99) == 1.0 / 1e4

    def test_monotone_up_then_down_full_enumeration(self):
        for anneal in ("cosine", "linear"):
            sched = OneCycleSchedule(total_steps=250, max_lr=0.4, pct_start=0.25, anneal=anneal)
            values = [sched.lr_at(s) for s in range(250)]
            peak = sched.peak_step
            assert all(a <= b for a, b in zip(values[: peak + 1], values[1 : peak + 1]))
            assert all(a >= b for a, b in zip(values[peak:], values[peak + 1 :]))

    def test_out_of_range_rejected(self):
        sched = OneCycleSchedule(total_steps=10, max_lr=1.0)
        with pytest.raises(ValueError):
            sched.lr_at(10)
        with pytest.raises(ValueError):
            sched.lr_at(-1)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            OneCycleSchedule(total_steps=2, max_lr=1.0)
        with pytest.raises(ValueError):
            OneCycleSchedule(total_steps=100, max_lr=-1.0)
        with pytest.raises(ValueError):
            OneCycleSchedule(total_steps=100, max_lr=1.0, pct_start=1.0)
        with pytest.raises(ValueError):
            OneCycleSchedule(total_steps=100, max_lr=1.0, div_factor=0.5)
        with pytest.raises(ValueError):
            OneCycleSchedule(total_steps=100, max_lr=1.0, anneal="step")
        with pytest.raises(ValueError):
            # peak would land on the final step
            OneCycleSchedule(total_steps=10, max_lr=1.0, pct_start=0.95)


class TestP2SGrad:
    def test_aligned_embedding_zero_loss(self):
        scorer = PrototypeScorer(prototypes=np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss = p2sgrad_loss(np.array([[2.0, 0.0]]), scorer, [0])
        assert loss == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_embedding_unit_loss(self):
        scorer = PrototypeScorer(prototypes=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        loss = p2sgrad_loss(np.array([[0.0, 0.0, 3.0]]), scorer, [0])
        assert loss == pytest.approx(1.0, abs=1e-15)

    def test_hand_evaluated_cosines(self):
        scorer = PrototypeScorer(
            prototypes=np.array([[1.0, 1.0], [0.0, 1.0]]) / np.array([[math.sqrt(2)], [1.0]])
        )
        loss = p2sgrad_loss(np.array([[1.0, 0.0]]), scorer, [0])
        assert loss == pytest.approx((math.cos(math.pi / 4) - 1.0) ** 2, abs=1e-12)
        assert loss == pytest.approx(0.085786437626905, abs=1e-12)

    def test_zero_norm_rejected(self):
        scorer = PrototypeScorer(prototypes=np.eye(2))
        with pytest.raises(ValueError, match="non-zero norm"):
            p2sgrad_loss(np.zeros((1, 2)), scorer, [0])
        with pytest.raises(ValueError, match="non-zero norm"):
            PrototypeScorer(prototypes=np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_loss_bounded(self, rng):
        scorer = PrototypeScorer(prototypes=rng.normal(size=(2, 5)))
        emb = rng.normal(size=(20, 5))
        loss = p2sgrad_loss(emb, scorer, rng.integers(0, 2, size=20))
        assert 0.0 <= loss <= 8.0

    def test_scale_invariance(self, rng):
        protos = rng.normal(size=(2, 4))
        emb = rng.normal(size=(6, 4))
        labels = rng.integers(0, 2, size=6)
        base = p2sgrad_loss(emb, PrototypeScorer(prototypes=protos), labels)
        scaled_emb = emb.copy()
        scaled_emb[2] *= 2.0
        assert p2sgrad_loss(scaled_emb, PrototypeScorer(prototypes=protos), labels) == pytest.approx(
            base, abs=1e-12
        )
        scaled_protos = protos.copy()
        scaled_protos[1] *= 7.5
        assert p2sgrad_loss(emb, PrototypeScorer(prototypes=scaled_protos), labels) == pytest.approx(
            base, abs=1e-12
        )

    def test_gradient_zero_at_zero_loss(self):
        scorer = PrototypeScorer(prototypes=np.array([[1.0, 0.0], [0.0, 1.0]]))
        grad_e, grad_p = p2sgrad_gradient(np.array([[5.0, 0.0]]), scorer, [0])
        assert np.allclose(grad_e, 0.0, atol=1e-15)
        assert np.allclose(grad_p, 0.0, atol=1e-15)

    def test_gradient_matches_finite_differences(self, rng):
        emb = rng.normal(size=(3, 4))
        protos = rng.normal(size=(2, 4))
        labels = rng.integers(0, 2, size=3)

        def loss_fn(e, p):
            return p2sgrad_loss(e, PrototypeScorer(prototypes=p), labels)

        grad_e, grad_p = p2sgrad_gradient(emb, PrototypeScorer(prototypes=protos), labels)
        fd_e, fd_p = finite_difference_gradients(loss_fn, emb, protos)
        assert np.all(np.abs(grad_e - fd_e) <= 1e-5 * np.maximum(1.0, np.abs(fd_e)))
        assert np.all(np.abs(grad_p - fd_p) <= 1e-5 * np.maximum(1.0, np.abs(fd_p)))
