"""Bidirectional transformer encoder over reaction SMILES tokens."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import nn
from .autograd import tensor as T
from .autograd.tensor import Tensor
from .vocab import PAD

log = logging.getLogger(__name__)


@dataclass
class SeqEncoderConfig:
    vocab_size: int
    max_len: int = 128
    width: int = 64
    heads: int = 4
    layers: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if self.dropout != 0.0:
            raise ValueError("dropout is not supported")


def pad_batch(seqs: Sequence[Sequence[int]], length: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad (and truncate) id lists; returns ids and a validity mask."""
    ids = np.full((len(seqs), length), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for b, s in enumerate(seqs):
        if not len(s):
            raise ValueError("empty token list")
        if len(s) > length:
            log.warning("truncating sequence of %d tokens to %d", len(s), length)
            s = s[:length]
        ids[b, :len(s)] = s
        mask[b, :len(s)] = True
    return ids, mask


class SeqEncoder(nn.Module):
    def __init__(self, rng: np.random.Generator, cfg: SeqEncoderConfig):
        self.cfg = cfg
        self.tok_embed = T.parameter(rng.normal(0.0, 0.1, size=(cfg.vocab_size, cfg.width)))
        self.pos_embed = T.parameter(rng.normal(0.0, 0.1, size=(cfg.max_len, cfg.width)))
        self.blocks = [nn.TransformerBlock(rng, cfg.width, cfg.heads) for _ in range(cfg.layers)]

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """``ids``/``mask`` of shape (B, N) -> (B, N, C) with padded rows zeroed."""
        if ids.max(initial=0) >= self.cfg.vocab_size or ids.min(initial=0) < 0:
            raise IndexError("token id outside encoder vocabulary")
        B, N = ids.shape
        x = T.embedding(self.tok_embed, ids) + self.pos_embed[:N]
        attn_mask = mask[:, None, None, :]
        for block in self.blocks:
            x = block(x, attn_mask)
        return x * mask[:, :, None].astype(x.data.dtype)

    def encode_batch(self, token_lists: Sequence[Sequence[int]]) -> Tensor:
        """(B, N, C) output.  Attention runs over the longest sequence only; rows
        past it are padding and are zero either way."""
        N = self.cfg.max_len
        ids, mask = pad_batch(token_lists, N)
        used = int(mask.sum(axis=1).max())
        out = self.forward(ids[:, :used], mask[:, :used])
        if used == N:
            return out
        zeros = np.zeros((len(token_lists), N - used, self.cfg.width), dtype=out.data.dtype)
        return T.concat([out, zeros], axis=1)

    def encode_reaction(self, tokens: Sequence[int]) -> Tensor:
        return self.encode_batch([tokens])[0]


def encode_reaction(tokens: Sequence[int], encoder: SeqEncoder) -> Tensor:
    return encoder.encode_reaction(tokens)
