"""Parameter containers and the transformer building blocks shared by every model part."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Tree of named parameters, walked through instance attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return T.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = init_weight(rng, d_in, d_out)
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``(B, L, C)`` inputs.

    ``mask`` is broadcastable to ``(B, 1, Lq, Lk)``; True marks allowed pairs.
    The last attention map is kept on ``self.last_weights`` for inspection.
    """

    def __init__(self, rng: np.random.Generator, d_q: int, heads: int, d_kv: Optional[int] = None):
        d_kv = d_q if d_kv is None else d_kv
        if d_q % heads:
            raise ValueError(f"width {d_q} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(rng, d_q, d_q)
        self.wk = Linear(rng, d_kv, d_q, bias=False)  # a key bias cancels in the softmax
        self.wv = Linear(rng, d_kv, d_q)
        self.wo = Linear(rng, d_q, d_q)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, C = x.shape
        return x.reshape(B, L, self.heads, C // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        B, Lq, C = q_in.shape
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        out = T.attention(q, k, v, mask, scale=1.0 / math.sqrt(C // self.heads))
        self.last_weights = T._last_attention[0]
        out = out.transpose(0, 2, 1, 3).reshape(B, Lq, C)
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d: int, mult: int = 2):
        self.fc1 = Linear(rng, d, d * mult)
        self.fc2 = Linear(rng, d * mult, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class TransformerBlock(Module):
    """Post-norm self-attention block: ``x = LN(x + attn(x)); x = LN(x + ff(x))``."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.attn = MultiHeadAttention(rng, d, heads)
        self.norm1 = LayerNorm(d)
        self.ff = FeedForward(rng, d)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None, kv: Optional[Tensor] = None) -> Tensor:
        """``kv`` defaults to ``x``; pass a longer sequence to attend beyond the query rows."""
        x = self.norm1(x + self.attn(x, x if kv is None else kv, mask))
        return self.norm2(x + self.ff(x))
