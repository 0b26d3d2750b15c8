"""Model building blocks on top of the autodiff core.

Modules hold ``Parameter`` leaves; ``Module.parameters()`` walks attributes in
insertion order, so two runs with the same seed build and update parameters in
the same sequence. All weight init draws from an explicit
``numpy.random.Generator`` with uniform ``+-1/sqrt(fan_in)`` bounds.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class SequenceTooLongError(ValueError):
    """Temporal input exceeds the positional table this model was built with."""


class Parameter(Tensor):
    """Trainable tensor; always float32 and grad-enabled."""

    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=np.float32), requires_grad=True)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Base class; submodules and parameters are discovered from ``__dict__``."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for value in self.__dict__.values():
            if isinstance(value, Parameter):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays: list[np.ndarray]):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"state has {len(arrays)} arrays, model expects {len(params)}")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise ValueError(f"state array shape {a.shape} does not match parameter {p.data.shape}")
            p.data = a.astype(np.float32)

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(_uniform_init(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class Mlp(Module):
    """Two-layer feed-forward; LeakyReLU by default, GELU inside transformers."""

    def __init__(self, rng, d_in: int, d_hidden: int, d_out: int, activation: str = "leaky_relu"):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out)
        self._act = T.gelu if activation == "gelu" else T.leaky_relu

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self._act(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.shift = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift)


class LearnedPositions(Module):
    """Additive learned positional table, capped at ``max_len`` steps."""

    def __init__(self, rng, max_len: int, d_model: int):
        self.max_len = max_len
        self.table = Parameter(rng.normal(0.0, 0.02, size=(max_len, d_model)))

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        if t > self.max_len:
            raise SequenceTooLongError(f"sequence length {t} exceeds positional table of {self.max_len}")
        return x + T.slice_axis(self.table, 0, 0, t)


class SelfAttention(Module):
    """Multi-head scaled dot-product attention over (..., T, d_model)."""

    def __init__(self, rng, d_model: int, n_heads: int):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = Linear(rng, d_model, 3 * d_model)
        self.proj = Linear(rng, d_model, d_model)

    def _heads(self, x: Tensor) -> Tensor:
        # (B, T, d_model) -> (B, H, T, d_head)
        b, t, _ = x.shape
        return T.transpose(T.reshape(x, (b, t, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def attention_probs(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (output, attention weights (B, H, T, T))."""
        b, t, _ = x.shape
        qkv = self.qkv(x)
        q = self._heads(T.slice_axis(qkv, -1, 0, self.d_model))
        k = self._heads(T.slice_axis(qkv, -1, self.d_model, 2 * self.d_model))
        v = self._heads(T.slice_axis(qkv, -1, 2 * self.d_model, 3 * self.d_model))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        probs = T.softmax(scores, axis=-1)
        ctx = T.transpose(T.matmul(probs, v), (0, 2, 1, 3))
        out = self.proj(T.reshape(ctx, (b, t, self.d_model)))
        return out, probs

    def __call__(self, x: Tensor) -> Tensor:
        out, _ = self.attention_probs(x)
        return out


class TransformerBlock(Module):
    """Pre-norm residual block: attention then GELU feed-forward."""

    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int | None = None):
        d_ff = d_ff if d_ff is not None else 4 * d_model
        self.ln1 = LayerNorm(d_model)
        self.attn = SelfAttention(rng, d_model, n_heads)
        self.ln2 = LayerNorm(d_model)
        self.ff = Mlp(rng, d_model, d_ff, d_model, activation="gelu")

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class TransformerStack(Module):
    """Positional table, N pre-norm blocks, final layer norm."""

    def __init__(self, rng, d_model: int, n_heads: int, n_layers: int, max_len: int = 64):
        self.pos = LearnedPositions(rng, max_len, d_model)
        self.blocks = [TransformerBlock(rng, d_model, n_heads) for _ in range(n_layers)]
        self.ln_out = LayerNorm(d_model)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.pos(x)
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class Conv1d(Module):
    """Valid strided temporal convolution, channels last."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1):
        self.stride = stride
        self.kernel = Parameter(_uniform_init(rng, (kernel, c_in, c_out), kernel * c_in))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.kernel, stride=self.stride) + self.bias


class UpConv1d(Module):
    """Transposed temporal convolution expanding time by an integer factor."""

    def __init__(self, rng, c_in: int, c_out: int, factor: int):
        self.factor = factor
        self.kernel = Parameter(_uniform_init(rng, (factor, c_in, c_out), c_in))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.upconv1d(x, self.kernel, factor=self.factor) + self.bias


class Adam:
    """Adam with bias correction; state follows the parameter list order."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - lr * update).astype(np.float32)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def warmup_cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0, min_lr: float = 0.0) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to ``min_lr``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    frac = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + np.cos(np.pi * frac))


def one_hot(idx: np.ndarray, depth: int) -> np.ndarray:
    """Float32 one-hot rows for an integer index array."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape + (depth,), dtype=np.float32)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out
