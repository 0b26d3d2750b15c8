"""Layers and optimizer: shapes, gradients, parameter ordering, convergence."""

import numpy as np
import pytest

from emoface import nn, tensor as T
from emoface.nn import (
    Adam,
    Conv1d,
    LearnedPositions,
    Linear,
    Mlp,
    Module,
    SelfAttention,
    SequenceTooLongError,
    TransformerBlock,
    TransformerStack,
    UpConv1d,
    warmup_cosine_lr,
)
from emoface.tensor import GradTape, Tensor, grad_check


def rng():
    return np.random.default_rng(0)


class TestModules:
    def test_parameter_order_stable(self):
        def build():
            return TransformerStack(rng(), d_model=8, n_heads=2, n_layers=2)

        a = [p.data for p in build().parameters()]
        b = [p.data for p in build().parameters()]
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert x.shape == y.shape
            assert np.array_equal(x, y)

    def test_linear_init_bounds(self):
        lin = Linear(rng(), 100, 50)
        bound = 1.0 / np.sqrt(100)
        assert np.all(np.abs(lin.weight.data) <= bound)
        assert np.allclose(lin.bias.data, 0.0)

    def test_state_round_trip(self):
        m1 = Mlp(rng(), 4, 8, 2)
        m2 = Mlp(np.random.default_rng(99), 4, 8, 2)
        m2.load_state_arrays(m1.state_arrays())
        x = Tensor(np.ones((3, 4), dtype=np.float32))
        assert np.array_equal(m1(x).data, m2(x).data)
        with pytest.raises(ValueError):
            m2.load_state_arrays(m1.state_arrays()[:-1])

    def test_positions_cap(self):
        pos = LearnedPositions(rng(), 8, 4)
        pos(Tensor(np.zeros((2, 8, 4))))
        with pytest.raises(SequenceTooLongError):
            pos(Tensor(np.zeros((2, 9, 4))))

    def test_attention_rows_sum_to_one(self):
        attn = SelfAttention(rng(), 8, 2)
        x = Tensor(np.random.default_rng(3).normal(size=(2, 5, 8)).astype(np.float32))
        out, probs = attn.attention_probs(x)
        assert out.shape == (2, 5, 8)
        assert probs.shape == (2, 2, 5, 5)
        assert np.allclose(probs.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_transformer_shapes(self):
        stack = TransformerStack(rng(), d_model=16, n_heads=4, n_layers=2, max_len=12)
        x = Tensor(np.random.default_rng(5).normal(size=(3, 10, 16)).astype(np.float32))
        assert stack(x).shape == (3, 10, 16)

    def test_conv_modules_shapes(self):
        c = Conv1d(rng(), 3, 5, kernel=4, stride=4)
        u = UpConv1d(rng(), 5, 3, factor=4)
        x = Tensor(np.zeros((2, 16, 3), dtype=np.float32))
        h = c(x)
        assert h.shape == (2, 4, 5)
        assert u(h).shape == (2, 16, 3)


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_block_param_grads_match_fd(self, seed):
        block = TransformerBlock(np.random.default_rng(1000 + seed), d_model=4, n_heads=2, d_ff=8)
        params = block.parameters()
        for p in params:
            p.data = p.data.astype(np.float64)
        x = Tensor(np.random.default_rng(seed).normal(size=(1, 3, 4)))

        def loss_value():
            return T.sum_(T.tanh(block(x))).item()

        block.zero_grad()
        with GradTape() as tape:
            loss = T.sum_(T.tanh(block(x)))
        tape.backward(loss)

        h = 1e-6
        for p in params:
            flat = p.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                hi = loss_value()
                flat[j] = orig - h
                lo = loss_value()
                flat[j] = orig
                fd = (hi - lo) / (2 * h)
                ad = p.grad.reshape(-1)[j]
                assert abs(ad - fd) / max(1.0, abs(ad), abs(fd)) < 1e-4

    def test_adam_quadratic_convergence(self):
        p = nn.Parameter(np.array([5.0, -3.0], dtype=np.float32))
        opt = Adam([p], lr=0.1)
        target = np.array([1.0, 2.0], dtype=np.float32)
        for _ in range(300):
            opt.zero_grad()
            with GradTape() as tape:
                d = p - Tensor(target)
                loss = T.sum_(d * d)
            tape.backward(loss)
            opt.step()
        assert np.allclose(p.data, target, atol=1e-3)

    def test_clip_grad_norm(self):
        p = nn.Parameter(np.zeros(4))
        p.grad = np.full(4, 3.0, dtype=np.float32)
        norm = nn.clip_grad_norm([p], max_norm=1.0)
        assert np.isclose(norm, 6.0)
        assert np.isclose(np.linalg.norm(p.grad), 1.0, atol=1e-6)


class TestSchedule:
    def test_warmup_then_decay(self):
        lrs = [warmup_cosine_lr(s, 100, 1.0, warmup_steps=10) for s in range(100)]
        assert lrs[0] == pytest.approx(0.1)
        assert lrs[9] == pytest.approx(1.0)
        assert max(lrs) == pytest.approx(1.0)
        assert lrs[-1] < 0.01
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))

    def test_one_hot(self):
        oh = nn.one_hot(np.array([0, 2]), 3)
        assert np.array_equal(oh, np.array([[1, 0, 0], [0, 0, 1]], dtype=np.float32))
