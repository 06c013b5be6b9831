"""Layers for the menu network: linear maps, attention, transformer blocks.

All parameters are float64 leaf tensors. Weight matrices start from a
truncated normal (std 0.02, clipped at two standard deviations by
resampling) and biases from zero, which keeps the initial menu softmax
near-uniform.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (Tensor, layer_norm, matmul, register_operator, relu,
                       reshape, softmax, transpose, zeros)


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two std."""
    out = rng.standard_normal(shape) * std
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(bad.sum()) * std
        bad = np.abs(out) > bound
    return out


class Module:
    """Minimal parameter container; children are discovered by attribute walk."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}."))
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    """Position-wise affine map on the last axis (a 1x1 convolution)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.weight = Tensor(truncated_normal(rng, (d_in, d_out), std),
                             requires_grad=True)
        self.bias = zeros((d_out,), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim > 2:
            # One flat GEMM is far cheaper than a broadcast batched product.
            lead = x.shape[:-1]
            flat = matmul(reshape(x, (-1, x.shape[-1])), self.weight) + self.bias
            return reshape(flat, (*lead, self.weight.shape[-1]))
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = zeros((dim,), requires_grad=True)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=self._eps)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor,
                                 n_heads: int = 1) -> Tensor:
    """Multi-head scaled dot-product attention over (..., seq, dim) inputs."""
    *lead, seq, dim = q.shape
    if dim % n_heads:
        raise ValueError(f"attention width {dim} not divisible by {n_heads} heads")
    head = dim // n_heads

    def split(t: Tensor) -> Tensor:
        t = reshape(t, (*lead, seq, n_heads, head))
        order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return transpose(t, order)  # (..., heads, seq, head)

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2)))
    weights = softmax(scores * (1.0 / math.sqrt(head)), axis=-1)
    ctx = matmul(weights, vh)  # (..., heads, seq, head)
    order = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    ctx = transpose(ctx, order)  # (..., seq, heads, head)
    return reshape(ctx, (*lead, seq, dim))


register_operator("attention", scaled_dot_product_attention)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, d_hidden: int, n_heads: int,
                 rng: np.random.Generator, std: float = 0.02):
        if d_hidden % n_heads:
            raise ValueError(f"heads ({n_heads}) must divide hidden width ({d_hidden})")
        self.q = Linear(d_model, d_hidden, rng, std)
        self.k = Linear(d_model, d_hidden, rng, std)
        self.v = Linear(d_model, d_hidden, rng, std)
        self.out = Linear(d_hidden, d_hidden, rng, std)
        self._heads = n_heads

    def __call__(self, x: Tensor) -> Tensor:
        ctx = scaled_dot_product_attention(self.q(x), self.k(x), self.v(x),
                                           n_heads=self._heads)
        return self.out(ctx)


class TransformerBlock(Module):
    """One encoder block: attention and a position-wise feed-forward, each
    followed by a residual connection and layer norm."""

    def __init__(self, d_model: int, d_hidden: int, n_heads: int,
                 rng: np.random.Generator, std: float = 0.02):
        if d_model != d_hidden:
            raise ValueError(
                f"residual connections need d_model == d_hidden, got {d_model} vs {d_hidden}")
        self.attn = MultiHeadAttention(d_model, d_hidden, n_heads, rng, std)
        self.norm1 = LayerNorm(d_hidden)
        self.ff1 = Linear(d_hidden, d_hidden, rng, std)
        self.ff2 = Linear(d_hidden, d_hidden, rng, std)
        self.norm2 = LayerNorm(d_hidden)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x + self.attn(x))
        return self.norm2(h + self.ff2(relu(self.ff1(h))))


class ConvPair(Module):
    """Two 1x1 convolutions with a ReLU in between."""

    def __init__(self, d_in: int, d_mid: int, d_out: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.first = Linear(d_in, d_mid, rng, std)
        self.second = Linear(d_mid, d_out, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(relu(self.first(x)))


class MLP(Module):
    """Two fully-connected layers with a ReLU activation."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 std: float = 0.02):
        self.first = Linear(d_in, d_hidden, rng, std)
        self.second = Linear(d_hidden, d_out, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(relu(self.first(x)))
