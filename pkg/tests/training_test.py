import itertools

import numpy as np
import pytest

from src.codebook.kmeans import kmeans_init, sample_descriptors
from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError
from src.config.avlad_configs import SynthConfig, TrainConfig
from src.data_io.synth import synth_generate
from src.fusion.stream_fusion import assemble_video
from src.training.classifier import (
    ClassifierModel,
    apply_dropout,
    classifier_forward,
    label_target,
    softmax_cross_entropy,
    softmax_cross_entropy_soft,
)
from src.training.optimizer import (
    AdamState,
    accumulate_gradients,
    adam_step,
    clip_gradients,
    global_norm,
    optimizer_update,
)
from src.training.trainer import (
    TrainingExample,
    _stage2_micro_batch,
    _stage2_params,
    _unpack_stage2,
    accuracy,
    train_stage1,
    train_stage2,
)

from .helpers import central_difference, random_codebook, random_feature_map, relative_error


@pytest.fixture(scope="module")
def toy_data():
    cfg = SynthConfig(
        num_classes=3,
        num_sub_actions=6,
        sub_actions_per_class=2,
        layout="disjoint",
        noise_sigma=0.2,
        frames=4,
        locations=2,
        dim=6,
        train_per_class=4,
        val_per_class=2,
        test_per_class=0,
        seed=3,
    )
    synth = synth_generate(cfg)
    train = [TrainingExample(assemble_video(v), v.labels) for v in synth.data.split("train")]
    val = [TrainingExample(assemble_video(v), v.labels) for v in synth.data.split("val")]
    samples = sample_descriptors([ex.features for ex in train], max_samples=1000)
    cb = kmeans_init(samples, 6, seed=0, alpha=5.0)
    return train, val, cb


class TestAdam:
    def test_first_step_is_bias_corrected(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 0.0])}
        new_params, state = adam_step(params, grads, AdamState(), lr=0.1, epsilon=1e-8)
        expected = params["w"] - 0.1 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
        np.testing.assert_allclose(new_params["w"], expected, rtol=1e-12)
        assert state.t == 1

    def test_second_step_matches_hand_computation(self):
        params = {"w": np.array([0.0])}
        g1, g2 = 1.0, -2.0
        params, state = adam_step(params, {"w": np.array([g1])}, AdamState(), lr=0.01, epsilon=1e-4)
        params, state = adam_step(params, {"w": np.array([g2])}, state, lr=0.01, epsilon=1e-4)

        m = 0.9 * (0.1 * g1) + 0.1 * g2
        v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
        m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
        first = -0.01 * 1.0 / (1.0 + 1e-4)
        np.testing.assert_allclose(params["w"], [first - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-4)], rtol=1e-12)
        assert state.t == 2

    def test_constant_gradient_gives_constant_steps(self):
        g = np.array([0.5, -3.0, 1e-3])
        params = {"w": np.zeros(3)}
        state = AdamState()
        for _ in range(20):
            params, state = adam_step(params, {"w": g}, state, lr=0.01, epsilon=1e-4)
        # 梯度不变时 m̂ = g、v̂ = g²，每一步都是 −lr·g/(|g|+ε)
        np.testing.assert_allclose(params["w"], -20 * 0.01 * g / (np.abs(g) + 1e-4), rtol=1e-9)
        assert state.t == 20

    def test_does_not_modify_inputs(self):
        params = {"w": np.ones(2)}
        grads = {"w": np.ones(2)}
        adam_step(params, grads, AdamState(), lr=1.0, epsilon=1e-4)
        np.testing.assert_array_equal(params["w"], np.ones(2))

    def test_layout_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState(), lr=0.1, epsilon=1e-4)
        with pytest.raises(ShapeMismatchError):
            adam_step({"w": np.ones(2)}, {"v": np.ones(2)}, AdamState(), lr=0.1, epsilon=1e-4)


class TestGradientHandling:
    def test_clip_scales_above_threshold(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([[0.0], [4.0]])}
        clipped = clip_gradients(grads, 1.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
        np.testing.assert_allclose(clipped["b"], [[0.0], [0.8]])
        unchanged = clip_gradients(grads, 10.0)
        np.testing.assert_array_equal(unchanged["a"], grads["a"])
        with pytest.raises(InvalidParameterError):
            clip_gradients(grads, 0.0)

    def test_accumulate_averages(self):
        averaged = accumulate_gradients([{"w": np.array([1.0, 2.0])}, {"w": np.array([3.0, 6.0])}])
        np.testing.assert_array_equal(averaged["w"], [2.0, 4.0])
        with pytest.raises(EmptyInputError):
            accumulate_gradients([])
        with pytest.raises(ShapeMismatchError):
            accumulate_gradients([{"w": np.ones(2)}, {"w": np.ones(3)}])

    def test_update_averages_before_clipping(self):
        micro = [{"w": np.array([10.0, 0.0])}, {"w": np.array([0.0, 0.0])}]
        _, state, norm = optimizer_update({"w": np.zeros(2)}, micro, AdamState(), lr=0.1, clip_norm=1.0, epsilon=1e-4)
        assert norm == 5.0
        # 先平均成 [5, 0]，再裁剪成 [1, 0]
        np.testing.assert_allclose(state.m["w"], [0.1, 0.0])


class TestClassifier:
    def test_cross_entropy_gradient(self, rng):
        logits = rng.normal(size=5)
        loss, grad = softmax_cross_entropy(logits, 2)
        assert loss > 0
        numeric = central_difference(lambda z: softmax_cross_entropy(z, 2)[0], logits)
        assert relative_error(grad, numeric) <= 1e-6
        with pytest.raises(InvalidParameterError):
            softmax_cross_entropy(logits, 5)

    def test_soft_cross_entropy_batch_gradient(self, rng):
        logits = rng.normal(size=(3, 4))
        target = np.stack([label_target((0,), 4), label_target((1, 3), 4), label_target((2,), 4)])
        _, grad = softmax_cross_entropy_soft(logits, target)
        numeric = central_difference(lambda z: softmax_cross_entropy_soft(z, target)[0], logits)
        assert relative_error(grad, numeric) <= 1e-6

    def test_soft_matches_hard_for_one_hot(self, rng):
        logits = rng.normal(size=4)
        hard_loss, hard_grad = softmax_cross_entropy(logits, 1)
        soft_loss, soft_grad = softmax_cross_entropy_soft(logits, label_target((1,), 4))
        assert abs(hard_loss - soft_loss) <= 1e-12
        np.testing.assert_allclose(hard_grad, soft_grad, atol=1e-12)

    def test_label_target(self):
        np.testing.assert_array_equal(label_target((1, 3), 4), [0.0, 0.5, 0.0, 0.5])
        with pytest.raises(InvalidParameterError):
            label_target((), 4)
        with pytest.raises(InvalidParameterError):
            label_target((4,), 4)

    def test_forward_checks_dimension(self, rng):
        model = ClassifierModel.initialize(3, 8, dropout_rate=0.5, seed=0)
        assert classifier_forward(rng.normal(size=8), model).C == 3
        with pytest.raises(ShapeMismatchError):
            classifier_forward(rng.normal(size=7), model)

    def test_initialize_is_seeded(self):
        a = ClassifierModel.initialize(3, 8, dropout_rate=0.5, seed=4)
        b = ClassifierModel.initialize(3, 8, dropout_rate=0.5, seed=4)
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, np.zeros(3))

    def test_dropout(self, rng):
        v = np.ones(20_000)
        np.testing.assert_array_equal(apply_dropout(v, 0.5, rng, training=False), v)
        np.testing.assert_array_equal(apply_dropout(v, 0.0, rng, training=True), v)
        dropped = apply_dropout(v, 0.5, rng, training=True)
        assert set(np.unique(dropped).tolist()) <= {0.0, 2.0}
        assert abs(dropped.mean() - 1.0) < 0.05
        with pytest.raises(InvalidParameterError):
            apply_dropout(v, 1.0, rng, training=True)

    def test_dropout_keep_fraction_over_many_elements(self, rng):
        dropped = apply_dropout(np.ones(1_000_000), 0.5, rng, training=True)
        assert abs(np.count_nonzero(dropped) / dropped.size - 0.5) < 0.002
        assert dropped.mean() == pytest.approx(1.0, abs=0.004)

    def test_accuracy_counts_any_matching_label(self, rng):
        examples = [TrainingExample(random_feature_map(rng, 1, 1, 2), labels) for labels in [(0,), (1, 2), (2,)]]
        logits = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        assert accuracy(logits, examples) == pytest.approx(2 / 3)


class TestEndToEndGradient:
    @pytest.mark.parametrize("tie_anchors", [False, True])
    def test_loss_gradient_matches_finite_differences(self, rng, tie_anchors):
        examples = [TrainingExample(random_feature_map(rng, 2, 3, 4), (c,)) for c in (0, 2)]
        targets = np.stack([label_target(ex.labels, 3) for ex in examples])
        cb = random_codebook(rng, 3, 4, alpha=0.8, tied=tie_anchors)
        model = ClassifierModel(W=rng.normal(size=(3, 12)), b=rng.normal(size=3), dropout_rate=0.0)
        params = _stage2_params(cb, model, tie_anchors)
        _, grads = _stage2_micro_batch(examples, targets, params, cb, 0.0, rng)

        for name in params:

            def loss(value: np.ndarray, name: str = name) -> float:
                perturbed = {**params, name: value}
                current_cb, _ = _unpack_stage2(perturbed, cb, model)
                return _stage2_micro_batch(examples, targets, perturbed, current_cb, 0.0, rng)[0]

            assert relative_error(grads[name], central_difference(loss, params[name])) <= 1e-4, name


class TestTraining:
    def test_stage1_keeps_best_epoch(self, toy_data):
        train, val, cb = toy_data
        cfg = TrainConfig(k=6, alpha=5.0, stage1_epochs=8, batch_size=4, dropout=0.3, seed=1)
        seen = []
        result = train_stage1(train, cb, cfg, val_set=val, num_classes=3, on_epoch=seen.append)

        assert [m.epoch for m in result.history] == list(range(1, 9))
        assert seen == result.history
        accuracies = [m.val_acc for m in result.history]
        assert result.best_val_acc == max(accuracies)
        assert result.best_epoch == accuracies.index(max(accuracies)) + 1
        assert result.model.feature_dim == 36

    def test_stage1_learns_disjoint_classes(self, toy_data):
        train, val, cb = toy_data
        cfg = TrainConfig(k=6, alpha=5.0, stage1_epochs=40, stage1_lr=0.05, batch_size=4, dropout=0.0)
        result = train_stage1(train, cb, cfg, val_set=val)
        assert result.history[-1].train_loss < result.history[0].train_loss
        assert result.best_val_acc == 1.0

    def test_stage1_is_deterministic(self, toy_data):
        train, val, cb = toy_data
        cfg = TrainConfig(k=6, alpha=5.0, stage1_epochs=3, batch_size=3, seed=9)
        a = train_stage1(train, cb, cfg, val_set=val)
        b = train_stage1(train, cb, cfg, val_set=val, workers=3)
        np.testing.assert_array_equal(a.model.W, b.model.W)

    def test_accumulation_matches_larger_batch(self, toy_data):
        train, _, cb = toy_data
        base = {"k": 6, "alpha": 5.0, "stage1_epochs": 2, "dropout": 0.0, "keep_best": False}
        accumulated = train_stage1(train, cb, TrainConfig(**base, batch_size=2, accumulation_steps=2))
        single = train_stage1(train, cb, TrainConfig(**base, batch_size=4, accumulation_steps=1))
        np.testing.assert_allclose(accumulated.model.W, single.model.W, atol=1e-12)

    def test_stage1_baseline_pooling_without_codebook(self, toy_data):
        train, val, _ = toy_data
        result = train_stage1(train, None, TrainConfig(pooling="avg", stage1_epochs=2), val_set=val)
        assert result.model.feature_dim == 6
        assert result.codebook is None

    def test_stage1_vlad_needs_codebook(self, toy_data):
        train, _, _ = toy_data
        with pytest.raises(InvalidParameterError):
            train_stage1(train, None, TrainConfig(stage1_epochs=1))
        with pytest.raises(EmptyInputError):
            train_stage1([], None, TrainConfig(pooling="avg"))

    def test_stage1_zero_lr_keeps_initial_classifier(self, toy_data):
        train, val, cb = toy_data
        cfg = TrainConfig(k=6, alpha=5.0, stage1_lr=0.0, stage1_epochs=3, batch_size=4, keep_best=False)
        result = train_stage1(train, cb, cfg, val_set=val)
        initial = ClassifierModel.initialize(3, cb.K * cb.D, cfg.dropout, cfg.seed)
        np.testing.assert_array_equal(result.model.W, initial.W)
        np.testing.assert_array_equal(result.model.b, initial.b)

    def test_stage1_full_batch_loss_never_increases(self, toy_data):
        train, _, cb = toy_data
        cfg = TrainConfig(
            k=6,
            alpha=5.0,
            dropout=0.0,
            stage1_lr=0.001,
            stage1_epochs=10,
            batch_size=len(train),
            keep_best=False,
        )
        losses = [m.train_loss for m in train_stage1(train, cb, cfg).history]
        assert all(later <= earlier for earlier, later in itertools.pairwise(losses))
        assert losses[-1] < losses[0]

    def test_stage2_keeps_lowering_the_training_loss(self, toy_data):
        train, val, cb = toy_data
        cfg = TrainConfig(
            k=6,
            alpha=5.0,
            dropout=0.0,
            batch_size=len(train),
            stage1_epochs=5,
            stage2_epochs=4,
            stage1_lr=0.01,
            stage2_lr=1e-5,
            keep_best=False,
            seed=2,
        )
        first = train_stage1(train, cb, cfg, val_set=val)
        second = train_stage2(train, cb, first.model, cfg, val_set=val)
        assert second.stage == 2
        assert [m.epoch for m in second.history] == [1, 2, 3, 4]
        losses = [m.train_loss for m in second.history]
        # 第二阶段第一个 epoch 记的是第一阶段最终参数上的损失
        assert losses[0] < first.history[-1].train_loss
        assert all(later < earlier for earlier, later in itertools.pairwise(losses))
        assert not np.array_equal(second.codebook.residual_anchors, cb.residual_anchors)

    def test_stage2_zero_lr_leaves_codebook_unchanged(self, toy_data):
        train, _, cb = toy_data
        cfg = TrainConfig(
            k=6, alpha=5.0, stage1_epochs=2, stage2_epochs=2, stage2_lr=0.0, batch_size=4, keep_best=False
        )
        first = train_stage1(train, cb, cfg)
        second = train_stage2(train, cb, first.model, cfg)
        np.testing.assert_array_equal(second.codebook.residual_anchors, cb.residual_anchors)
        np.testing.assert_array_equal(second.codebook.assign_anchors, cb.assign_anchors)
        np.testing.assert_array_equal(second.model.W, first.model.W)
        np.testing.assert_array_equal(second.model.b, first.model.b)

    def test_stage2_single_update_is_clip_then_adam(self, toy_data):
        train, _, cb = toy_data
        cfg = TrainConfig(
            k=6,
            alpha=5.0,
            dropout=0.0,
            clip_norm=0.01,
            batch_size=len(train),
            stage1_epochs=2,
            stage2_epochs=1,
            stage2_lr=0.01,
            keep_best=False,
            seed=4,
        )
        first = train_stage1(train, cb, cfg)
        second = train_stage2(train, cb, first.model, cfg)

        rng = np.random.default_rng([cfg.seed, 2])
        order = rng.permutation(len(train))
        targets = np.stack([label_target(train[i].labels, 3) for i in order])
        params = _stage2_params(cb, first.model, tie_anchors=False)
        _, grads = _stage2_micro_batch([train[i] for i in order], targets, params, cb, 0.0, rng)
        assert global_norm(grads) > cfg.clip_norm
        expected, _ = adam_step(
            params,
            clip_gradients(grads, cfg.clip_norm),
            AdamState.zeros_like(params),
            cfg.stage2_lr,
            cfg.adam_epsilon,
            cfg.adam_beta1,
            cfg.adam_beta2,
        )
        np.testing.assert_allclose(second.model.W, expected["W"], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(second.model.b, expected["b"], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(second.codebook.residual_anchors, expected["residual_anchors"], rtol=1e-12)
        np.testing.assert_allclose(second.codebook.assign_anchors, expected["assign_anchors"], rtol=1e-12)

    def test_stage2_moves_untied_anchors_apart(self, toy_data):
        train, _, cb = toy_data
        cfg = TrainConfig(k=6, alpha=5.0, stage1_epochs=2, stage2_epochs=1, stage2_lr=0.05, keep_best=False)
        first = train_stage1(train, cb, cfg)
        second = train_stage2(train, cb, first.model, cfg)
        assert cb.anchors_tied
        assert not second.codebook.anchors_tied
        assert set(second.adam_state.m) == {"W", "b", "residual_anchors", "assign_anchors"}

    def test_stage2_tied_anchors_stay_tied(self, toy_data):
        train, _, cb = toy_data
        cfg = TrainConfig(
            k=6, alpha=5.0, stage1_epochs=2, stage2_epochs=2, stage2_lr=0.05, keep_best=False, tie_anchors=True
        )
        first = train_stage1(train, cb, cfg)
        second = train_stage2(train, cb, first.model, cfg)
        assert second.codebook.anchors_tied
        assert not np.array_equal(second.codebook.residual_anchors, cb.residual_anchors)
        assert set(second.adam_state.m) == {"W", "b", "anchors"}

    def test_stage2_requires_vlad_pooling(self, toy_data):
        train, _, cb = toy_data
        model = ClassifierModel.initialize(3, 36, dropout_rate=0.5, seed=0)
        with pytest.raises(InvalidParameterError):
            train_stage2(train, cb, model, TrainConfig(pooling="max"))
        with pytest.raises(ShapeMismatchError):
            train_stage2(train, cb, ClassifierModel.initialize(3, 10, dropout_rate=0.5, seed=0), TrainConfig())
