"""Parameterized layers built on the autodiff tensor core.

Layers follow the pre-norm transformer recipe. Projection weights are
initialized uniform in +/- sqrt(1/d_in); residual output projections can be
zero-initialized so a freshly built residual branch is an exact identity.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


def uniform_init(rng, shape, d_in):
    scale = np.sqrt(1.0 / d_in)
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


class Module:
    """Base class: parameter discovery by attribute walk, insertion-ordered."""

    def named_parameters(self, prefix=""):
        for key, value in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, zero_init=False):
        if zero_init:
            self.W = Tensor(np.zeros((d_in, d_out)), requires_grad=True)
        else:
            self.W = uniform_init(rng, (d_in, d_out), d_in)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.linear(x, self.W, self.b)


class MLP(Module):
    """Two-layer perceptron with a GELU in between."""

    def __init__(self, d_in, d_hidden, d_out, rng):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with input and output projections.

    Inputs have shape (..., n, d). When `q_pos` / `k_pos` are given, the
    projected queries / keys are rotary-encoded at those 2D coordinates
    before the head split; this requires an even per-head dim so rotation
    pairs never straddle a head boundary. `key_bias` is added to the
    attention logits (broadcast over heads and queries), which is how
    occluded track points are suppressed.
    """

    def __init__(self, dim, heads, rng, zero_init_out=False):
        if dim % heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.w_o = Linear(dim, dim, rng, zero_init=zero_init_out)

    def _split(self, x, n):
        # (..., n, d) -> (..., h, n, d_head)
        return x.reshape(x.shape[:-2] + (n, self.heads, self.d_head)).swapaxes(-2, -3)

    def __call__(self, q_in, k_in, v_in, q_pos=None, k_pos=None, key_bias=None,
                 return_weights=False):
        if q_pos is not None or k_pos is not None:
            if self.d_head % 2 != 0:
                raise ConfigurationError(
                    f"rotary attention needs an even per-head dim, got {self.d_head}"
                )
        n_q, n_k = q_in.shape[-2], k_in.shape[-2]
        q = self.w_q(q_in)
        k = self.w_k(k_in)
        v = self.w_v(v_in)
        if q_pos is not None:
            q = T.rope2d(q, q_pos)
        if k_pos is not None:
            k = T.rope2d(k, k_pos)
        qh = self._split(q, n_q)
        kh = self._split(k, n_k)
        vh = self._split(v, n_k)
        logits = (qh @ kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.d_head))
        if key_bias is not None:
            logits = logits + key_bias
        weights = T.softmax(logits, axis=-1)
        out = weights @ vh
        out = out.swapaxes(-2, -3).reshape(q_in.shape[:-2] + (n_q, self.dim))
        out = self.w_o(out)
        if return_weights:
            return out, weights
        return out


class TransformerBlock(Module):
    """Pre-norm self-attention + MLP with residual connections."""

    def __init__(self, dim, heads, rng, mlp_ratio=4):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng)

    def __call__(self, x, pos=None, key_bias=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, q_pos=pos, k_pos=pos, key_bias=key_bias)
        x = x + self.mlp(self.norm2(x))
        return x


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self._params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self._params]
        self._v = [np.zeros_like(p.data) for p in self._params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self._params):
            g = p.grad
            if g is None:
                continue
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            m_hat = self._m[i] / (1 - b1 ** self.t)
            v_hat = self._v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self._params:
            p.zero_grad()
