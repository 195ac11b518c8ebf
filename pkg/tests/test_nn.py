"""Module/parameter bookkeeping and optimizer behavior.

The Adam check uses the constant-gradient closed form: with g ≡ c the
bias-corrected moments are exactly mhat = c and vhat = c², so every step
moves the parameter by lr·sign(c)·|c|/(|c|+eps) — an oracle independent
of the implementation's loop.
"""

import numpy as np
import pytest

from burnmap import autodiff as ad
from burnmap import nn
from burnmap.autodiff import Tensor
from burnmap.errors import ConfigError


class _Net(nn.Module):
    def __init__(self, rng):
        super().__init__()
        self.conv = nn.Conv2d(3, 4, 3, rng, padding=1)
        self.bn = nn.BatchNorm2d(4)
        self.blocks = nn.ModuleList([nn.Linear(4, 4, rng), nn.Linear(4, 2, rng)])

    def forward(self, x):
        h = ad.relu(self.bn.forward(self.conv.forward(x)))
        h = ad.reshape(ad.global_avg_pool(h), (h.data.shape[0], 4))
        for blk in self.blocks:
            h = blk.forward(h)
        return h


class TestModuleBookkeeping:
    def test_named_parameters_in_declaration_order(self):
        net = _Net(np.random.default_rng(0))
        names = [n for n, _ in net.named_parameters()]
        assert names == [
            "conv.weight",
            "bn.gamma",
            "bn.beta",
            "blocks.0.weight",
            "blocks.0.bias",
            "blocks.1.weight",
            "blocks.1.bias",
        ]

    def test_named_buffers_cover_running_stats(self):
        net = _Net(np.random.default_rng(0))
        assert [n for n, _ in net.named_buffers()] == [
            "bn.running_mean",
            "bn.running_var",
        ]

    def test_train_eval_propagates(self):
        net = _Net(np.random.default_rng(0))
        assert net.training and net.bn.training
        net.eval()
        assert not net.training and not net.bn.training and not net.blocks[0].training
        net.train()
        assert net.bn.training

    def test_state_dict_round_trip(self):
        rng = np.random.default_rng(1)
        net = _Net(rng)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
        net.forward(x)  # move the running stats off their init
        state = net.state_dict()

        other = _Net(np.random.default_rng(99))
        other.load_state_dict(state)
        for (_, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data)
        for (_, a), (_, b) in zip(net.named_buffers(), other.named_buffers()):
            np.testing.assert_array_equal(a, b)

    def test_state_dict_is_a_snapshot(self):
        net = _Net(np.random.default_rng(2))
        state = net.state_dict()
        net.conv.weight.data += 1.0
        assert not np.array_equal(state["conv.weight"], net.conv.weight.data)

    def test_load_state_dict_rejects_mismatch(self):
        net = _Net(np.random.default_rng(3))
        state = net.state_dict()
        state.pop("bn.gamma")
        with pytest.raises(ConfigError, match="bn.gamma"):
            net.load_state_dict(state)
        bad = net.state_dict()
        bad["conv.weight"] = np.zeros((1, 1, 1, 1), dtype=np.float32)
        with pytest.raises(ConfigError, match="conv.weight"):
            net.load_state_dict(bad)

    def test_zero_grad_clears(self):
        net = _Net(np.random.default_rng(4))
        x = Tensor(np.random.default_rng(5).standard_normal((2, 3, 4, 4)).astype(np.float32))
        out = net.forward(x)
        ad.loss_dice(ad.sigmoid(out), np.zeros(out.data.shape, dtype=np.float32)).backward()
        assert any(p.grad is not None for p in net.parameters())
        net.zero_grad()
        assert all(p.grad is None for p in net.parameters())


class TestLayers:
    def test_conv_he_init_scale_and_determinism(self):
        a = nn.Conv2d(8, 16, 3, np.random.default_rng(7))
        b = nn.Conv2d(8, 16, 3, np.random.default_rng(7))
        np.testing.assert_array_equal(a.weight.data, b.weight.data)
        std = a.weight.data.std()
        expect = np.sqrt(2.0 / (8 * 9))
        assert 0.8 * expect < std < 1.2 * expect

    def test_conv_bias_optional(self):
        rng = np.random.default_rng(8)
        with_bias = nn.Conv2d(2, 3, 1, rng, bias=True)
        without = nn.Conv2d(2, 3, 1, rng)
        assert with_bias.bias is not None and without.bias is None
        assert [n for n, _ in with_bias.named_parameters()] == ["weight", "bias"]

    def test_linear_forward_matches_affine(self):
        rng = np.random.default_rng(9)
        layer = nn.Linear(4, 3, rng)
        x = rng.standard_normal((5, 4)).astype(np.float32)
        out = layer.forward(Tensor(x))
        np.testing.assert_allclose(
            out.data, x @ layer.weight.data + layer.bias.data, rtol=1e-6
        )

    def test_batchnorm_uses_module_mode(self):
        layer = nn.BatchNorm2d(2)
        x = Tensor(np.random.default_rng(10).standard_normal((4, 2, 3, 3)).astype(np.float32))
        layer.forward(x)
        assert not np.allclose(layer.running_mean, 0.0)  # train mode updated stats
        layer.eval()
        snapshot = layer.running_mean.copy()
        out1 = layer.forward(x)
        out2 = layer.forward(x)
        np.testing.assert_array_equal(out1.data, out2.data)
        np.testing.assert_array_equal(layer.running_mean, snapshot)


class TestAdam:
    def test_constant_gradient_closed_form(self):
        p = nn.Parameter(np.array([1.0, -2.0], dtype=np.float64))
        opt = nn.Adam([p], lr=0.01)
        for _ in range(25):
            p.grad = np.array([0.5, -3.0])
            opt.step()
        step = 0.01  # lr * |c| / (|c| + eps) ~= lr for eps << |c|
        np.testing.assert_allclose(p.data[0], 1.0 - 25 * step, rtol=1e-6)
        np.testing.assert_allclose(p.data[1], -2.0 + 25 * step, rtol=1e-6)

    def test_skips_parameters_without_gradient(self):
        p = nn.Parameter(np.ones(3, dtype=np.float32))
        q = nn.Parameter(np.ones(3, dtype=np.float32))
        opt = nn.Adam([p, q], lr=0.1)
        p.grad = np.ones(3, dtype=np.float32)
        opt.step()
        assert not np.array_equal(p.data, np.ones(3))
        np.testing.assert_array_equal(q.data, np.ones(3))

    def test_zero_grad_and_lr_validation(self):
        p = nn.Parameter(np.ones(2, dtype=np.float32))
        opt = nn.Adam([p], lr=0.1)
        p.grad = np.ones(2, dtype=np.float32)
        opt.zero_grad()
        assert p.grad is None
        with pytest.raises(ConfigError):
            nn.Adam([p], lr=0.0)

    def test_float32_parameters_stay_float32(self):
        p = nn.Parameter(np.ones(2, dtype=np.float32))
        opt = nn.Adam([p], lr=0.1)
        p.grad = np.ones(2, dtype=np.float32)
        opt.step()
        assert p.data.dtype == np.float32

    def test_training_reduces_loss_on_toy_problem(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((64, 4)).astype(np.float32)
        y = (x[:, 0] > 0).astype(np.float32).reshape(-1, 1)
        layer = nn.Linear(4, 1, rng)
        opt = nn.Adam(layer.parameters(), lr=0.05)
        first = last = None
        for _ in range(60):
            out = ad.loss_bce(ad.sigmoid(layer.forward(Tensor(x))), y)
            if first is None:
                first = float(out.data)
            layer.zero_grad()
            out.backward()
            opt.step()
            last = float(out.data)
        assert last < 0.5 * first
