"""Loss, optimizers, early stopping and the two-phase protocol on the tiny fixture."""

import math

import numpy as np
import pandas as pd
import pytest

from fdftnet.core import Tensor, backward, ops
from fdftnet.errors import CheckpointMismatchError, DataError, NonFiniteLossError
from fdftnet.layers.linear import DenseParams
from fdftnet.layers.module import Parameter
from fdftnet.models.schemas import CutoutConfig, ModelConfig, SynthSpec
from fdftnet.network import assemble, build_backbone
from fdftnet.services.pipeline import (
    evaluate_checkpoint,
    finetune,
    module_from_checkpoint,
    optimizer_from_checkpoint,
    pretrain,
    score_checkpoint,
)
from fdftnet.services.trainer import (
    OptimizerState,
    StopDecision,
    Trainer,
    TrainState,
    adam_step,
    batch_indices,
    bce_loss,
    clip_grad_norm,
    early_stopping_update,
    sgd_step,
)
from fdftnet.utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from fdftnet.utils.datasets import DatasetSplit, synth_dataset, to_model_input


def _param(values):
    p = Parameter((len(values),), dtype=np.float64)
    p.data[...] = values
    return p


@pytest.fixture(scope="module")
def backbone_ckpt(tiny_data, shared_cfg):
    return pretrain(None, tiny_data, shared_cfg, seed=0)


class TestLoss:
    def test_half_probability_costs_ln2(self):
        loss = bce_loss(Tensor(np.full((4, 1), 0.5)), np.array([0, 1, 1, 0]))
        assert loss.item() == pytest.approx(math.log(2), rel=1e-6)

    def test_saturated_probability_stays_finite(self):
        loss = bce_loss(Tensor(np.array([[0.0], [1.0]])), np.array([1, 0]))
        assert math.isfinite(loss.item())


class TestOptimizers:
    def test_sgd_momentum(self):
        p = _param([1.0, 2.0])
        g = np.array([0.5, -1.0])
        state = OptimizerState("sgd", learning_rate=0.1, momentum=0.9)
        sgd_step({"p": p}, {"p": g}, state)
        np.testing.assert_allclose(p.data, [0.95, 2.1])
        sgd_step({"p": p}, {"p": g}, state)
        np.testing.assert_allclose(p.data, [0.95 - 0.19 * 0.5, 2.1 + 0.19])
        assert state.step_count == 2

    def test_adam_first_step_moves_by_learning_rate(self):
        p = _param([1.0, -1.0, 0.0])
        adam_step({"p": p}, {"p": np.array([3.0, -0.01, 100.0])}, OptimizerState("adam", learning_rate=0.01))
        np.testing.assert_allclose(p.data, [0.99, -0.99, -0.01], atol=1e-5)

    def test_frozen_and_gradless_parameters_are_skipped(self):
        frozen, idle = _param([1.0]), _param([2.0])
        frozen.freeze()
        state = OptimizerState("sgd", learning_rate=1.0)
        sgd_step({"frozen": frozen, "idle": idle}, {"frozen": np.array([5.0]), "idle": None}, state)
        assert frozen.data[0] == 1.0
        assert idle.data[0] == 2.0
        assert state.buffers.get("velocity", {}) == {}

    def test_sgd_lowers_loss_of_a_linear_head(self, rng):
        head = DenseParams(4, 1)
        head.reset_parameters(0)
        head.astype(np.float64)
        x = Tensor(rng.normal(size=(16, 4)), dtype=np.float64)
        y = (x.data @ np.array([1.0, -1.0, 0.5, 0.0]) > 0).astype(np.int64)
        state = OptimizerState("sgd", learning_rate=0.1, momentum=0.0)
        losses = []
        for _ in range(12):
            head.zero_grad()
            loss = bce_loss(ops.sigmoid(head(x)), y)
            losses.append(loss.item())
            backward(loss)
            sgd_step(head.trainable_parameters(), head.grads(), state)
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_clip_grad_norm(self):
        grads = {"a": np.array([3.0, 4.0]), "b": None}
        assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(grads["a"], [0.6, 0.8], rtol=1e-9)
        assert clip_grad_norm(grads, 10.0) == pytest.approx(1.0)
        np.testing.assert_allclose(grads["a"], [0.6, 0.8], rtol=1e-9)


class TestEarlyStopping:
    def test_equal_loss_is_not_an_improvement(self):
        state = TrainState(patience=2, max_epochs=10)
        decisions = [early_stopping_update(state, v) for v in (1.0, 0.9, 0.9, 0.95)]
        assert decisions == [StopDecision.CONTINUE] * 3 + [StopDecision.STOP]
        assert (state.best_epoch, state.best_val_loss) == (2, 0.9)

    def test_epoch_budget(self):
        state = TrainState(patience=5, max_epochs=2)
        assert early_stopping_update(state, 1.0) is StopDecision.CONTINUE
        assert early_stopping_update(state, 0.5) is StopDecision.STOP

    def test_non_finite_validation_loss(self):
        with pytest.raises(NonFiniteLossError):
            early_stopping_update(TrainState(), float("nan"))

    @pytest.mark.parametrize("n,sizes", [(9, [4, 5]), (8, [4, 4]), (1, [1]), (10, [4, 4, 2])])
    def test_trailing_single_sample_joins_previous_batch(self, n, sizes):
        assert [len(b) for b in batch_indices(np.arange(n), 4)] == sizes


class TestTrainer:
    def test_restores_best_epoch_weights(self, tiny_cfg, tiny_data, monkeypatch):
        backbone = build_backbone("plain-cnn", tiny_cfg, seed=0)
        trainer = Trainer(backbone, tiny_cfg.training.pretrain_optimizer, 8, max_epochs=10, patience=2, seed=0)
        losses = iter([0.5, 0.9, 0.9])
        snapshots = []

        def fake_validate(split):
            snapshots.append(trainer.model.state_dict())
            return next(losses), 0.5

        monkeypatch.setattr(trainer, "_validate", fake_validate)
        result = trainer.fit(tiny_data["train"], tiny_data["validation"])
        assert result.state.epoch == 3
        assert result.state.best_epoch == 1
        for name, value in backbone.state_dict().items():
            np.testing.assert_array_equal(value, snapshots[0][name], err_msg=name)
        assert any(not np.array_equal(snapshots[0][n], snapshots[-1][n]) for n in snapshots[0])

    def test_non_finite_training_loss(self, tiny_cfg, tiny_data):
        train = tiny_data["train"]
        poisoned = DatasetSplit("train", np.full_like(train.images, np.nan), train.labels, train.ids, train.resolution)
        with pytest.raises(NonFiniteLossError):
            pretrain(None, {"train": poisoned, "validation": tiny_data["validation"]}, tiny_cfg)


class TestProtocol:
    def test_pretrain_records_history_and_optimizer(self, backbone_ckpt, tmp_path, tiny_cfg, tiny_data):
        assert backbone_ckpt.kind == "backbone"
        assert 1 <= len(backbone_ckpt.history) <= tiny_cfg.training.pretrain_epochs
        optimizer = optimizer_from_checkpoint(backbone_ckpt)
        assert optimizer.kind == "adam" and optimizer.step_count > 0
        assert set(optimizer.buffers) == {"m", "v"}

    def test_adam_buffers_survive_the_checkpoint_file(self, backbone_ckpt, tmp_path):
        restored = optimizer_from_checkpoint(load_checkpoint(save_checkpoint(backbone_ckpt, tmp_path / "b.ckpt")))
        original = optimizer_from_checkpoint(backbone_ckpt)
        assert restored.step_count == original.step_count > 0
        params = backbone_ckpt.parameters()
        for slot in ("m", "v"):
            assert set(restored.buffers[slot]) == set(original.buffers[slot])
            for name, value in restored.buffers[slot].items():
                assert value.shape == params[name].shape, name
                np.testing.assert_array_equal(value, original.buffers[slot][name], err_msg=name)

    def test_epoch_log(self, tiny_cfg, tiny_data, tmp_path):
        log_path = tmp_path / "backbone.ckpt.epochs.csv"
        ckpt = pretrain(None, tiny_data, tiny_cfg, seed=1, epoch_log=log_path)
        frame = pd.read_csv(log_path, header=None, names=["epoch", "train_loss", "val_loss", "val_acc"])
        assert len(frame) == len(ckpt.history)
        assert list(frame["epoch"]) == [r.epoch for r in ckpt.history]

    def test_resolution_mismatch(self, tiny_data, make_config):
        with pytest.raises(DataError):
            pretrain(None, tiny_data, make_config(input_resolution=32))

    def test_finetune_needs_backbone_checkpoint(self, backbone_ckpt, tiny_data, tiny_cfg):
        model_ckpt = Checkpoint.from_module(assemble(backbone_ckpt, tiny_cfg, seed=0))
        with pytest.raises(CheckpointMismatchError):
            finetune(model_ckpt, tiny_data, tiny_cfg)

    def test_finetune_keeps_backbone_and_is_reproducible(self, backbone_ckpt, tiny_data, tiny_cfg):
        first = finetune(backbone_ckpt, tiny_data, tiny_cfg, seed=5)
        second = finetune(backbone_ckpt, tiny_data, tiny_cfg, seed=5)
        assert first.kind == "model"
        assert first.metadata.frozen_prefixes == ["backbone."]
        for name, value in backbone_ckpt.parameters("features.").items():
            np.testing.assert_array_equal(first.parameters("backbone.")[name], value, err_msg=name)
        assert list(first.tensors) == list(second.tensors)
        for name in first.tensors:
            np.testing.assert_array_equal(first.tensors[name], second.tensors[name], err_msg=name)

    def test_evaluate_checkpoint(self, backbone_ckpt, tiny_data, tiny_cfg):
        model_ckpt = finetune(backbone_ckpt, tiny_data, tiny_cfg, seed=0)
        result = evaluate_checkpoint(model_ckpt, tiny_data["test"], workers=2, batch_size=4)
        assert result.n_samples == len(tiny_data["test"])
        assert 0.0 <= result.auroc <= 1.0

    def test_sharded_scoring_matches_single_thread(self, backbone_ckpt, tiny_data):
        one = score_checkpoint(backbone_ckpt, tiny_data["test"], workers=1, batch_size=4)
        three = score_checkpoint(backbone_ckpt, tiny_data["test"], workers=3, batch_size=4)
        np.testing.assert_allclose(one, three, rtol=1e-6)

    def test_module_round_trip(self, backbone_ckpt, tiny_cfg):
        model = module_from_checkpoint(Checkpoint.from_module(assemble(backbone_ckpt, tiny_cfg, seed=3)))
        assert model.backbone.frozen
        assert all(not n.startswith("backbone.") for n in model.trainable_parameters())

    def test_signed_pixel_range(self):
        images = np.array([0.0, 0.5, 1.0], dtype=np.float32)
        np.testing.assert_array_equal(to_model_input(images, "signed"), [-1.0, 0.0, 1.0])
        assert to_model_input(images, "unit") is images


ACCEPTANCE_PER_CLASS = 1000


def _full_size_run(amplitude: float):
    data = synth_dataset(SynthSpec(n_per_class=ACCEPTANCE_PER_CLASS, seed=0, amplitude=amplitude))
    assert [len(data[r]) // 2 for r in ("train", "validation", "test", "finetune")] == [600, 180, 200, 20]
    cfg = ModelConfig()
    backbone = pretrain(None, data, cfg, seed=0)
    model = finetune(backbone, data, cfg, seed=0)
    return evaluate_checkpoint(model, data["test"], workers=4)


@pytest.mark.slow
def test_full_size_detector_separates_the_fixture():
    result = _full_size_run(amplitude=0.3)
    assert result.n_samples == 400
    assert result.accuracy >= 0.90
    assert result.auroc >= 0.95


@pytest.mark.slow
def test_full_size_detector_is_at_chance_without_artifacts():
    result = _full_size_run(amplitude=0.0)
    assert 0.45 <= result.accuracy <= 0.55


@pytest.mark.slow
def test_finetune_fits_thirty_two_images(backbone_ckpt, tiny_data, make_config):
    train = tiny_data["train"]
    keep = np.concatenate([np.flatnonzero(train.labels == c)[:16] for c in (0, 1)])
    split = DatasetSplit("finetune", train.images[keep], train.labels[keep], [train.ids[i] for i in keep], train.resolution)
    base = make_config()
    cfg = make_config(
        cutout=CutoutConfig(enabled=False),
        training=base.training.model_copy(update={"finetune_epochs": 200, "patience": 200}),
    )
    ckpt = finetune(backbone_ckpt, {"finetune": split, "validation": split}, cfg, seed=0)
    assert max(r.val_acc for r in ckpt.history) == 1.0
