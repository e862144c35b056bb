import numpy as np
import pytest

from fdftnet.core import Tensor, backward
from fdftnet.core import ops
from fdftnet.errors import ConfigError, ShapeMismatchError
from fdftnet.network.attention import SelfAttentionParams, channel_attention_forward, self_attention_forward
from fdftnet.services.trainer import OptimizerState, sgd_step


def _softmax(z, axis):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _reference_self_attention(x, p):
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)

    def project(conv):
        weight = conv.weight.data[:, :, 0, 0].astype(np.float64)
        return np.einsum("oc,bcn->bon", weight, flat) + conv.bias.data[None, :, None]

    f, g, hv = project(p.f), project(p.g), project(p.h)
    alpha = _softmax(np.einsum("bcj,bci->bji", g, f), axis=2)
    o = np.einsum("bci,bji->bcj", hv, alpha)
    return float(p.gamma.data[0]) * o.reshape(x.shape) + x, alpha


@pytest.fixture
def attention():
    p = SelfAttentionParams(16)
    p.reset_parameters(5)
    return p


class TestSelfAttention:
    def test_gamma_zero_is_identity(self, attention, rng):
        x = rng.normal(size=(2, 16, 4, 4)).astype(np.float32)
        y, _ = self_attention_forward(Tensor(x), attention)
        np.testing.assert_array_equal(y.data, x)

    def test_attention_rows_sum_to_one(self, attention, rng):
        _, amap = self_attention_forward(Tensor(rng.normal(size=(2, 16, 3, 5))), attention)
        assert amap.alpha.data.shape == (2, 15, 15)
        np.testing.assert_allclose(amap.row_sums(), 1.0, rtol=1e-5)

    def test_matches_reference(self, attention, rng):
        attention.gamma.data[...] = 0.7
        for conv in (attention.f, attention.g, attention.h):
            conv.bias.data[...] = rng.uniform(-0.3, 0.3, size=conv.bias.shape)
        x = rng.normal(size=(2, 16, 3, 3))
        y, amap = self_attention_forward(Tensor(x, dtype=np.float64), attention)
        expected, alpha = _reference_self_attention(x, attention)
        np.testing.assert_allclose(amap.alpha.data, alpha, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(y.data, expected, rtol=1e-5, atol=1e-5)

    def test_projection_widths(self, attention):
        assert attention.f.weight.shape == (2, 16, 1, 1)
        assert attention.g.weight.shape == (2, 16, 1, 1)
        assert attention.h.weight.shape == (16, 16, 1, 1)
        assert attention.gamma.shape == (1,)

    @pytest.mark.parametrize("channels", [4, 12])
    def test_channels_must_be_divisible_by_eight(self, channels):
        with pytest.raises(ConfigError):
            SelfAttentionParams(channels)

    def test_channel_mismatch(self, attention):
        with pytest.raises((ShapeMismatchError, ConfigError)):
            self_attention_forward(Tensor(np.zeros((1, 8, 2, 2))), attention)


class TestChannelAttention:
    def test_matches_reference(self, rng):
        x = rng.normal(size=(2, 4, 3, 3))
        y, amap = channel_attention_forward(Tensor(x, dtype=np.float64))
        flat = x.reshape(2, 4, 9)
        beta = _softmax(flat @ flat.transpose(0, 2, 1), axis=2)
        np.testing.assert_allclose(amap.beta.data, beta, rtol=1e-10)
        np.testing.assert_allclose(y.data, (beta @ flat).reshape(x.shape) + x, rtol=1e-10)

    def test_map_rows_sum_to_one(self, rng):
        _, amap = channel_attention_forward(Tensor(rng.normal(size=(3, 5, 2, 2))))
        assert amap.beta.data.shape == (3, 5, 5)
        np.testing.assert_allclose(amap.row_sums(), 1.0, rtol=1e-5)

    def test_rank_checked(self):
        with pytest.raises(ShapeMismatchError):
            channel_attention_forward(Tensor(np.zeros((2, 3, 4))))


class TestAttentionEdgeCases:
    def test_single_position_attends_to_itself(self, attention, rng):
        attention.gamma.data[...] = 0.5
        x = rng.normal(size=(2, 16, 1, 1))
        y, amap = self_attention_forward(Tensor(x, dtype=np.float64), attention)
        np.testing.assert_allclose(amap.alpha.data, 1.0)
        w = attention.h.weight.data[:, :, 0, 0].astype(np.float64)
        value = np.einsum("oc,bc->bo", w, x[:, :, 0, 0]) + attention.h.bias.data
        np.testing.assert_allclose(y.data[:, :, 0, 0], 0.5 * value + x[:, :, 0, 0], rtol=1e-5, atol=1e-6)

    def test_gamma_leaves_zero_under_training(self, attention, rng):
        x = Tensor(rng.normal(size=(2, 16, 3, 3)))
        target = Tensor(rng.normal(size=(2, 16, 3, 3)))
        state = OptimizerState("sgd", learning_rate=0.1)
        for _ in range(3):
            attention.zero_grad()
            y, _ = self_attention_forward(x, attention)
            backward(ops.sum_all(y * target))
            sgd_step(attention.trainable_parameters(), attention.grads(), state)
        assert attention.gamma.data[0] != 0.0

    def test_single_channel_doubles_input(self, rng):
        x = rng.normal(size=(2, 1, 3, 3))
        y, amap = channel_attention_forward(Tensor(x, dtype=np.float64))
        np.testing.assert_allclose(amap.beta.data, 1.0)
        np.testing.assert_allclose(y.data, 2 * x, rtol=1e-12)

    def test_identical_channels_attend_uniformly(self, rng):
        x = np.repeat(rng.normal(size=(1, 1, 4, 4)), 5, axis=1)
        _, amap = channel_attention_forward(Tensor(x, dtype=np.float64))
        np.testing.assert_allclose(amap.beta.data, 0.2, rtol=1e-12)

    def test_channel_permutation_equivariance(self, rng):
        x = rng.normal(size=(2, 6, 3, 3))
        perm = rng.permutation(6)
        y, _ = channel_attention_forward(Tensor(x, dtype=np.float64))
        y_perm, _ = channel_attention_forward(Tensor(x[:, perm], dtype=np.float64))
        np.testing.assert_allclose(y_perm.data, y.data[:, perm], rtol=1e-10, atol=1e-12)
