"""Perceiver-style projection of encoder outputs into fixed-length reaction tokens.

Per path (SMILES or graph): the decoder's word-embedding table is mapped into
the encoder width, appended to the encoder rows along the token axis, resized
to ``M`` rows by a learned token-axis linear map, and passed through a
Perceiver (latent cross-attention followed by a self-attention tower).
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .autograd import nn
from .autograd import tensor as T
from .autograd.tensor import Tensor

SMILES_TOKENS = 128
GRAPH_TOKENS = 3


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear-interpolation resampling matrix of shape (n_out, n_in)."""
    if n_out == n_in:
        return np.eye(n_out)
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


class PerceiverProjector(nn.Module):
    def __init__(self, rng: np.random.Generator, in_width: int, llm_width: int, base_rows: int,
                 vocab_size: int, num_latents: int, heads: int = 4, depth: int = 2):
        self.base_rows = base_rows
        self.num_latents = num_latents
        self.word_proj = nn.Linear(rng, llm_width, in_width)
        k = base_rows + vocab_size
        self.resize_w = T.parameter(nn.init_weight(rng, k, num_latents).data.T.copy())
        self.resize_b = T.parameter(np.zeros((num_latents, in_width)))
        self.latents = T.parameter(rng.normal(0.0, 0.5, size=(num_latents, in_width)))
        self.norm_q = nn.LayerNorm(in_width)
        self.norm_kv = nn.LayerNorm(in_width)
        self.cross = nn.MultiHeadAttention(rng, in_width, heads)
        self.tower = [nn.TransformerBlock(rng, in_width, heads) for _ in range(depth)]
        self.out_proj = nn.Linear(rng, in_width, llm_width)

    def resize(self, x: Tensor, word_table: Tensor) -> Tensor:
        """(B, n, C) encoder rows -> (B, M, C) tokens."""
        B, n, C = x.shape
        if C != self.latents.shape[1]:
            raise ValueError(f"input width {C} does not match projector width {self.latents.shape[1]}")
        if n != self.base_rows:
            x = T.matmul(Tensor(interp_matrix(self.base_rows, n), dtype=x.data.dtype), x)
        words = self.word_proj(word_table)
        if words.shape[0] + self.base_rows != self.resize_w.shape[1]:
            raise ValueError("word table size does not match the projector's vocabulary size")
        words = T.mul(words.reshape(1, *words.shape), np.ones((B, 1, 1), dtype=x.data.dtype))
        joined = T.concat([x, words], axis=1)
        return T.matmul(self.resize_w, joined) + self.resize_b

    def run_tower(self, h: Tensor) -> Tensor:
        for block in self.tower:
            h = block(h)
        return self.out_proj(h)

    def __call__(self, x: Tensor, word_table: Tensor) -> Tensor:
        tokens = self.resize(x, word_table)
        B = tokens.shape[0]
        lat = T.mul(self.latents.reshape(1, *self.latents.shape),
                    np.ones((B, 1, 1), dtype=tokens.data.dtype))
        h = lat + self.cross(self.norm_q(lat), self.norm_kv(tokens))
        return self.run_tower(h)


class ModalityProjector(nn.Module):
    """The two independent projection paths."""

    def __init__(self, rng: np.random.Generator, seq_width: int, graph_width: int, llm_width: int,
                 seq_rows: int, vocab_size: int, smiles_tokens: int = SMILES_TOKENS,
                 graph_tokens: int = GRAPH_TOKENS, heads: int = 4, depth: int = 2):
        self.smiles = PerceiverProjector(rng, seq_width, llm_width, seq_rows, vocab_size,
                                         smiles_tokens, heads, depth)
        self.graph = PerceiverProjector(rng, graph_width, llm_width, 1, vocab_size,
                                        graph_tokens, heads, depth)

    def project_smiles(self, x: Tensor, word_table: Tensor) -> Tensor:
        """(B, N, C) or (N, C) -> (B, 128, C_llm) or (128, C_llm)."""
        single = x.ndim == 2
        out = self.smiles(x.reshape(1, *x.shape) if single else x, word_table)
        return out[0] if single else out

    def project_graph(self, g: Tensor, word_table: Tensor) -> Tensor:
        """(B, C_g) or (C_g,) -> (B, 3, C_llm) or (3, C_llm)."""
        single = g.ndim == 1
        g = g.reshape(1, 1, g.shape[0]) if single else g.reshape(g.shape[0], 1, g.shape[1])
        out = self.graph(g, word_table)
        return out[0] if single else out


def assemble_context(smiles_toks: Tensor, graph_toks: Tensor, text_toks: Optional[Tensor]) -> Tensor:
    """Token-axis concatenation ``[smiles; graph; text]`` for (L, C) or (B, L, C) inputs."""
    parts = [smiles_toks, graph_toks] + ([text_toks] if text_toks is not None and text_toks.shape[-2] else [])
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise ValueError(f"context parts have different widths: {sorted(widths)}")
    return T.concat(parts, axis=-2)
