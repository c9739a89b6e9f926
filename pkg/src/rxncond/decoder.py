"""Tiny causal decoder with a slot-classification head and a generation head.

Context rows (reaction tokens + question text) are fully visible to every
position; target rows see the context and earlier target rows only.  Context
rows never look at target rows, so their per-layer states are computed once
(:meth:`TinyDecoder.encode_context`) and reused by :meth:`TinyDecoder.decode`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import nn
from .autograd import tensor as T
from .autograd.tensor import Tensor
from .smiles import SLOT_NAMES
from .vocab import BOS, EOS, PAD

log = logging.getLogger(__name__)


@dataclass
class ContextTokens:
    tokens: Tensor      # (B, L_ctx, C)
    mask: np.ndarray    # (B, L_ctx) bool

    def __post_init__(self):
        if self.mask.shape != self.tokens.shape[:2]:
            raise ValueError(f"mask shape {self.mask.shape} does not match context {self.tokens.shape[:2]}")

    @property
    def length(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ContextCache:
    states: list[Tensor]  # input to each block, plus the final normalised output last
    mask: np.ndarray


class TinyDecoder(nn.Module):
    def __init__(self, rng: np.random.Generator, vocab_size: int, width: int = 64, heads: int = 4,
                 layers: int = 2, max_context: int = 384, max_target: int = 96,
                 slot_sizes: Sequence[int] = (1, 1, 1, 1, 1)):
        self.width = width
        self.tok_embed = T.parameter(rng.normal(0.0, 0.1, size=(vocab_size, width)))
        self.pos_ctx = T.parameter(rng.normal(0.0, 0.1, size=(max_context, width)))
        self.pos_tgt = T.parameter(rng.normal(0.0, 0.1, size=(max_target, width)))
        self.blocks = [nn.TransformerBlock(rng, width, heads) for _ in range(layers)]
        self.lm_head = nn.Linear(rng, width, vocab_size)
        self.cls_heads = {name: nn.Linear(rng, width, n) for name, n in zip(SLOT_NAMES, slot_sizes)}

    @property
    def vocab_size(self) -> int:
        return self.tok_embed.shape[0]

    def embed_text(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.tok_embed, ids)

    def encode_context(self, ctx: ContextTokens) -> ContextCache:
        L = ctx.length
        if L > self.pos_ctx.shape[0]:
            raise ValueError(f"context of {L} tokens exceeds max_context {self.pos_ctx.shape[0]}")
        if ctx.tokens.shape[-1] != self.width:
            raise ValueError(f"context width {ctx.tokens.shape[-1]} does not match decoder width {self.width}")
        x = ctx.tokens + self.pos_ctx[:L]
        mask = ctx.mask[:, None, None, :]
        states = []
        for block in self.blocks:
            states.append(x)
            x = block(x, mask)
        states.append(x)
        return ContextCache(states, ctx.mask)

    def decode(self, cache: ContextCache, prefix: np.ndarray) -> Tensor:
        """Logits (B, L, V) for target prefix ids (B, L) starting with BOS."""
        prefix = np.asarray(prefix, dtype=np.int64)
        B, L = prefix.shape
        if L > self.pos_tgt.shape[0]:
            raise ValueError(f"target prefix of {L} tokens exceeds max_target {self.pos_tgt.shape[0]}")
        if np.any(prefix[:, 0] != BOS):
            raise ValueError("target prefix must begin with BOS")
        L_ctx = cache.mask.shape[1]
        causal = np.tril(np.ones((L, L), dtype=bool))
        mask = np.concatenate([np.broadcast_to(cache.mask[:, None, :], (B, L, L_ctx)),
                               np.broadcast_to(causal, (B, L, L))], axis=2)[:, None]
        y = T.embedding(self.tok_embed, prefix) + self.pos_tgt[:L]
        for block, ctx_state in zip(self.blocks, cache.states):
            y = block(y, mask, kv=T.concat([ctx_state, y], axis=1))
        return self.lm_head(y)

    def decode_forward(self, ctx: ContextTokens, prefix: np.ndarray) -> Tensor:
        return self.decode(self.encode_context(ctx), prefix)

    def pooled(self, cache: ContextCache) -> Tensor:
        w = cache.mask.astype(cache.states[-1].data.dtype)
        w = w / w.sum(axis=1, keepdims=True)
        return T.sum_(cache.states[-1] * w[:, :, None], axis=1)

    def slot_logits(self, cache: ContextCache) -> list[Tensor]:
        h = self.pooled(cache)
        return [self.cls_heads[name](h) for name in SLOT_NAMES]


def classification_loss(slot_logits: Sequence[Tensor], labels: np.ndarray) -> Tensor:
    """Sum over the five slots of batch-mean cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[1] != len(slot_logits):
        raise ValueError(f"labels must have shape (B, {len(slot_logits)})")
    loss = None
    for i, logits in enumerate(slot_logits):
        term = T.softmax_cross_entropy(logits, labels[:, i])
        loss = term if loss is None else loss + term
    return loss


def teacher_forcing(targets: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (prefix, target, mask) arrays; each target must end with EOS."""
    L = max(len(t) for t in targets)
    prefix = np.full((len(targets), L), PAD, dtype=np.int64)
    tgt = np.full((len(targets), L), PAD, dtype=np.int64)
    mask = np.zeros((len(targets), L), dtype=bool)
    for b, t in enumerate(targets):
        if not t or t[-1] != EOS:
            raise ValueError("generation target must end with EOS")
        if PAD in t:
            raise ValueError("generation target contains PAD")
        prefix[b, 0] = BOS
        prefix[b, 1:len(t)] = t[:-1]
        tgt[b, :len(t)] = t
        mask[b, :len(t)] = True
    return prefix, tgt, mask


def generation_loss(logits: Tensor, target: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Token cross-entropy summed over positions, averaged over the batch."""
    B = logits.shape[0]
    return T.softmax_cross_entropy(logits, target, weights=mask, reduction="sum") * (1.0 / B)


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries along the last axis; ties go to the lower index."""
    if k > logits.shape[-1]:
        raise ValueError(f"k={k} exceeds vocabulary size {logits.shape[-1]}")
    return np.argsort(-logits, axis=-1, kind="stable")[..., :k]


def predict_slots_topk(slot_logits: Sequence[np.ndarray], k: int) -> list[np.ndarray]:
    return [topk_indices(np.asarray(l), k) for l in slot_logits]


@dataclass
class BeamResult:
    tokens: list[int]   # generated ids, EOS excluded
    score: float        # log-probability divided by generated length (EOS included)
    logprob: float


def beam_search(step_logprobs: Callable[[list[list[int]]], np.ndarray], beam_width: int,
                max_len: int, bos: int = BOS, eos: int = EOS, alpha: float = 1.0,
                banned: Sequence[int] = ()) -> list[BeamResult]:
    """Length-normalised beam search over a next-token log-probability function.

    ``step_logprobs`` maps a list of prefixes (each starting with ``bos``) to an
    array of shape (len(prefixes), V).  Every hypothesis that emits ``eos``
    within ``max_len`` steps is collected; results are sorted best first.
    """
    alive: list[tuple[list[int], float]] = [([bos], 0.0)]
    finished: list[BeamResult] = []
    for step in range(max_len):
        if not alive:
            break
        lp = np.asarray(step_logprobs([p for p, _ in alive]), dtype=np.float64)
        if len(banned):
            lp[:, list(banned)] = -np.inf
        length = step + 1
        cand: list[tuple[float, list[int]]] = []
        for (prefix, score), row in zip(alive, lp):
            for v in range(len(row)):
                if not np.isfinite(row[v]):
                    continue
                total = score + row[v]
                if v == eos:
                    finished.append(BeamResult(prefix[1:], total / length ** alpha, total))
                else:
                    cand.append((total, prefix + [v]))
        cand.sort(key=lambda c: (-c[0], c[1]))
        alive = [(p, s) for s, p in cand[:beam_width]]
    finished.sort(key=lambda r: (-r.score, r.tokens))
    return finished


def enumerate_sequences(step_logprobs: Callable[[list[list[int]]], np.ndarray], vocab_size: int,
                        max_len: int, bos: int = BOS, eos: int = EOS, alpha: float = 1.0) -> list[BeamResult]:
    """Exhaustive scoring of every EOS-terminated sequence up to ``max_len`` tokens."""
    out = []
    frontier = [([bos], 0.0)]
    for step in range(max_len):
        nxt = []
        for prefix, score in frontier:
            row = np.asarray(step_logprobs([prefix])[0], dtype=np.float64)
            for v in range(vocab_size):
                total = score + row[v]
                if v == eos:
                    out.append(BeamResult(prefix[1:], total / (step + 1) ** alpha, total))
                else:
                    nxt.append((prefix + [v], total))
        frontier = nxt
    out.sort(key=lambda r: (-r.score, r.tokens))
    return out
