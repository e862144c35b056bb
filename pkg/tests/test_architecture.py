"""FTT, MBblockV3, backbones and the assembled detector."""

import numpy as np
import pytest
from pydantic import ValidationError

from fdftnet.core import Tensor, backward, no_grad
from fdftnet.errors import CheckpointMismatchError, ConfigError, ShapeMismatchError
from fdftnet.models.schemas import ModelConfig
from fdftnet.network import (
    DAFDFtNet,
    FineTuneTransformer,
    MBBlockV3Params,
    assemble,
    build_backbone,
    ftt_forward,
    mbblock_forward,
    model_forward,
    parameter_report,
)
from fdftnet.services.trainer import OptimizerState, bce_loss, sgd_step
from fdftnet.utils.checkpoint import Checkpoint


def _bn(c):
    return 2 * c


def _sep(c_in, c_out):
    return 9 * c_in + c_in * c_out


def _attention(c):
    return 2 * (c * (c // 8) + c // 8) + c * c + c + 1


def _mbblock(c_in, c_out, expansion, se_ratio):
    hidden = c_in * expansion
    squeezed = hidden // se_ratio
    se = hidden * squeezed + squeezed + squeezed * hidden + hidden
    return c_in * hidden + _bn(hidden) + 9 * hidden + _bn(hidden) + se + hidden * c_out + _bn(c_out)


def _expected_sections(cfg):
    """Parameter counts per section, from layer widths alone."""
    widths = [3] + cfg.backbone_channels
    conv = (lambda a, b: 9 * a * b) if cfg.backbone_kind == "plain-cnn" else _sep
    backbone = sum(conv(a, b) + _bn(b) for a, b in zip(widths, widths[1:]))
    stages = [cfg.ftt_channels[0]] + cfg.ftt_channels
    ftt = _sep(3, stages[0]) + _bn(stages[0])
    ftt += sum(_attention(a) + _sep(a, b) + _bn(b) for a, b in zip(stages, stages[1:]))
    mb_widths = [cfg.backbone_channels[-1] + cfg.ftt_channels[-1]] + [cfg.mbblock_channels] * cfg.mbblock_repeats
    mbblocks = sum(
        _mbblock(a, b, cfg.mbblock_expansion, cfg.se_ratio) for a, b in zip(mb_widths, mb_widths[1:])
    )
    return {
        "backbone": backbone,
        "ftt": ftt,
        "mbblocks": mbblocks,
        "channel_attention": 0,
        "head": cfg.mbblock_channels + 1,
    }


@pytest.fixture
def backbone(tiny_cfg):
    return build_backbone(tiny_cfg.backbone_kind, tiny_cfg, seed=3)


@pytest.fixture
def batch(rng):
    return Tensor(rng.uniform(0, 1, size=(2, 3, 16, 16)))


class TestFineTuneTransformer:
    def test_output_shape(self, batch):
        ftt = FineTuneTransformer([8, 16])
        ftt.reset_parameters(0)
        assert ftt_forward(batch, ftt).shape == (2, 16, 4, 4)

    def test_full_size_shape(self, rng):
        ftt = FineTuneTransformer([32, 64, 128])
        ftt.reset_parameters(0)
        with no_grad():
            out = ftt_forward(Tensor(rng.uniform(size=(2, 3, 64, 64))), ftt.set_mode("infer"))
        assert out.shape == (2, 128, 8, 8)

    def test_resolution_must_divide(self, rng):
        ftt = FineTuneTransformer([8, 16])
        with pytest.raises(ConfigError):
            ftt_forward(Tensor(rng.uniform(size=(2, 3, 10, 10))), ftt)

    def test_attention_stripped_variant_shares_names(self):
        full = dict(FineTuneTransformer([8, 16]).named_parameters())
        stripped = dict(FineTuneTransformer([8, 16], with_attention=False).named_parameters())
        assert set(stripped) < set(full)
        assert {n for n in full if n not in stripped} == {
            n for n in full if ".attention." in n
        }


class TestMBBlock:
    def test_stride_two_halves_resolution(self, rng):
        p = MBBlockV3Params(8, 16, expansion=2, stride=2)
        p.reset_parameters(0)
        y = mbblock_forward(Tensor(rng.normal(size=(2, 8, 6, 6))), p, 2)
        assert y.shape == (2, 16, 3, 3)

    def test_residual_only_when_shape_preserved(self, rng):
        x = rng.normal(size=(2, 8, 4, 4)).astype(np.float32)
        same = MBBlockV3Params(8, 8, expansion=2)
        wider = MBBlockV3Params(8, 16, expansion=2)
        for p in (same, wider):
            p.reset_parameters(0)
            p.project_bn.gamma.data[...] = 0.0
        np.testing.assert_allclose(mbblock_forward(Tensor(x), same, 1).data, x)
        np.testing.assert_array_equal(mbblock_forward(Tensor(x), wider, 1).data, 0.0)

    def test_projection_convs_have_no_bias(self):
        p = MBBlockV3Params(8, 8, expansion=2)
        assert p.expand.bias is None
        assert p.project.bias is None

    def test_invalid_stride(self):
        with pytest.raises(ConfigError):
            MBBlockV3Params(8, 8, stride=3)


class TestBackbone:
    @pytest.mark.parametrize("kind", ["plain-cnn", "sep-cnn"])
    def test_forward_gives_probabilities(self, tiny_cfg, batch, kind):
        backbone = build_backbone(kind, tiny_cfg, seed=0)
        with no_grad():
            p = model_forward(backbone, batch)
        assert p.shape == (2, 1)
        assert np.all((p.data > 0) & (p.data < 1))

    def test_unknown_kind(self, tiny_cfg):
        with pytest.raises(ConfigError):
            build_backbone("resnet", tiny_cfg, seed=0)

    def test_separable_backbone_is_smaller(self):
        cfg = ModelConfig()
        plain = build_backbone("plain-cnn", cfg, seed=0).features.parameter_count()
        separable = build_backbone("sep-cnn", cfg, seed=0).features.parameter_count()
        assert separable < plain
        assert plain == _expected_sections(cfg)["backbone"]
        assert separable == _expected_sections(cfg.model_copy(update={"backbone_kind": "sep-cnn"}))["backbone"]


class TestAssembledModel:
    def test_forward_shape_and_range(self, tiny_cfg, backbone, batch):
        model = assemble(backbone, tiny_cfg, seed=0)
        with no_grad():
            p = model_forward(model, batch)
        assert p.shape == (2, 1)
        assert np.all((p.data > 0) & (p.data < 1))

    def test_backbone_weights_copied_and_frozen(self, tiny_cfg, backbone):
        model = assemble(Checkpoint.from_module(backbone), tiny_cfg, seed=0)
        for name, value in backbone.features.state_dict().items():
            np.testing.assert_array_equal(model.backbone.state_dict()[name], value, err_msg=name)
        assert all(not name.startswith("backbone.") for name in model.trainable_parameters())
        assert model.backbone.frozen

    def test_frozen_backbone_unchanged_by_training_step(self, tiny_cfg, backbone, batch):
        model = assemble(backbone, tiny_cfg, seed=0)
        before = model.backbone.state_dict()
        model.set_mode("train")
        loss = bce_loss(model(batch), np.array([0, 1]))
        backward(loss)
        params = model.trainable_parameters()
        sgd_step(params, {n: p.grad for n, p in params.items()}, OptimizerState("sgd", learning_rate=0.1))
        for name, value in model.backbone.state_dict().items():
            np.testing.assert_array_equal(value, before[name], err_msg=name)
        assert model.backbone.blocks[0].conv.weight.grad is None

    def test_identical_to_attention_free_model_at_init(self, tiny_cfg, backbone, batch):
        with_attention = assemble(backbone, tiny_cfg, seed=11)
        without = assemble(backbone, tiny_cfg, seed=11, with_attention=False)
        with no_grad():
            a = model_forward(with_attention, batch)
            b = model_forward(without, batch)
        np.testing.assert_array_equal(a.data, b.data)

    def test_channel_attention_switch(self, make_config, backbone):
        model = DAFDFtNet(make_config(use_channel_attention=False))
        assert model.channel_attention is None
        assert model.parameter_count() == DAFDFtNet(make_config()).parameter_count()

    def test_ablation_arms_differ_only_in_the_head_computation(self, make_config, backbone, batch):
        with_head = assemble(backbone, make_config(), seed=4)
        without = assemble(backbone, make_config(use_channel_attention=False), seed=4)
        assert with_head.state_dict().keys() == without.state_dict().keys()
        for name, value in with_head.state_dict().items():
            np.testing.assert_array_equal(without.state_dict()[name], value, err_msg=name)
        with no_grad():
            a = model_forward(with_head, batch).data
            b = model_forward(without, batch).data
        assert not np.array_equal(a, b)

    def test_inference_is_deterministic_and_batch_invariant(self, tiny_cfg, backbone, rng):
        model = assemble(backbone, tiny_cfg, seed=2)
        images = Tensor(rng.uniform(size=(3, 3, 16, 16)))
        with no_grad():
            first = model_forward(model, images).data
            second = model_forward(model, images).data
            singles = [model_forward(model, Tensor(images.data[i:i + 1])).data for i in range(3)]
        np.testing.assert_array_equal(first, second)
        np.testing.assert_allclose(np.concatenate(singles), first, atol=1e-6)

    def test_mismatched_backbone_rejected(self, make_config, backbone):
        with pytest.raises(CheckpointMismatchError):
            assemble(backbone, make_config(backbone_kind="sep-cnn"), seed=0)

    def test_model_checkpoint_is_not_a_backbone(self, tiny_cfg, backbone):
        model = assemble(backbone, tiny_cfg, seed=0)
        with pytest.raises(CheckpointMismatchError):
            assemble(Checkpoint.from_module(model), tiny_cfg, seed=0)

    def test_wrong_input_shape(self, tiny_cfg, backbone, rng):
        model = assemble(backbone, tiny_cfg, seed=0)
        with pytest.raises(ShapeMismatchError):
            model_forward(model, Tensor(rng.uniform(size=(2, 3, 8, 8))))

    def test_parameter_report(self, tiny_cfg, backbone):
        model = assemble(backbone, tiny_cfg, seed=0)
        report = parameter_report(model)
        assert report.sections == _expected_sections(tiny_cfg)
        assert report.total == sum(_expected_sections(tiny_cfg).values())
        assert report.frozen == report.sections["backbone"]

    @pytest.mark.parametrize("overrides", [{}, {"backbone_kind": "sep-cnn", "use_channel_attention": False}])
    def test_full_size_parameter_count(self, overrides):
        cfg = ModelConfig(**overrides)
        report = parameter_report(DAFDFtNet(cfg))
        assert report.sections == _expected_sections(cfg)

    def test_single_stage_ftt_cannot_fuse(self, make_config):
        with pytest.raises(ConfigError):
            DAFDFtNet(make_config(ftt_repeats=1, ftt_channels=[8]))


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.ftt_repeats, cfg.mbblock_repeats) == (3, 4)
        assert (cfg.cutout.alpha, cfg.cutout.beta) == (3, 5)
        assert cfg.training.pretrain_batch_size == 64
        assert cfg.input_resolution == 64

    def test_ftt_channels_must_match_repeats(self):
        with pytest.raises(ValidationError):
            ModelConfig(ftt_repeats=2)

    def test_resolution_must_be_divisible(self):
        with pytest.raises(ValidationError):
            ModelConfig(input_resolution=60)

    def test_attended_channels_divisible_by_eight(self):
        with pytest.raises(ValidationError):
            ModelConfig(ftt_repeats=2, ftt_channels=[12, 16], input_resolution=16)
