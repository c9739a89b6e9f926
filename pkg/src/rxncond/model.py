"""The full multimodal model and batch encoding of instruction examples."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import nn
from .autograd import tensor as T
from .autograd.tensor import Tensor
from .decoder import (ContextCache, ContextTokens, TinyDecoder, beam_search, classification_loss,
                      generation_loss, teacher_forcing)
from .graph import GraphEncoder
from .projector import ModalityProjector, assemble_context
from .prompts import InstructionExample
from .seq_encoder import SeqEncoder, SeqEncoderConfig, pad_batch
from .smiles import SLOT_NAMES, ReactionRecord, parse_reaction
from .vocab import BOS, EOS, GRAPH_SENTINEL, PAD, SMILES_SENTINEL, UNK, CondVocab, TokenVocab, smiles_tokens

# parameters the original recipe keeps fixed: encoders and the language model body
BACKBONE_FROZEN = ("seq_encoder", "graph_encoder", "decoder.tok_embed", "decoder.pos_ctx",
                   "decoder.pos_tgt", "decoder.blocks")


@dataclass
class ModelConfig:
    seq_max_len: int = 128
    seq_width: int = 64
    seq_heads: int = 4
    seq_layers: int = 2
    graph_hidden: int = 64
    graph_width: int = 64
    graph_layers: int = 2
    llm_width: int = 64
    llm_heads: int = 4
    llm_layers: int = 2
    smiles_tokens: int = 128
    graph_tokens: int = 3
    projector_heads: int = 4
    projector_depth: int = 2
    max_text: int = 192
    max_target: int = 96

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class EncodedExample:
    record: ReactionRecord
    rxn_ids: list[int]
    text_ids: list[int]
    slot_labels: Optional[np.ndarray] = None
    target_ids: Optional[list[int]] = None
    source: Optional[InstructionExample] = None


def encode_example(ex: InstructionExample, tokens: TokenVocab, conds: Optional[CondVocab],
                   cfg: ModelConfig) -> EncodedExample:
    record = parse_reaction(ex.reaction_smiles, id=ex.id, corpus=ex.corpus)
    rxn_ids = tokens.encode_tokens(smiles_tokens(ex.reaction_smiles))[:cfg.seq_max_len]
    text_ids = tokens.encode_text(ex.question)[:cfg.max_text]
    labels = None
    if ex.slots is not None and conds is not None:
        labels = np.array([conds.encode(s, ex.slots.get(s, "NONE")) for s in SLOT_NAMES], dtype=np.int64)
    target = None
    if ex.answer:
        target = tokens.encode_condition(ex.answer if ex.answer != "NONE" else "")[:cfg.max_target - 1]
        if target[-1] != EOS:
            target = target[:-1] + [EOS]
    return EncodedExample(record, rxn_ids, text_ids, labels, target, ex)


class MMRCR(nn.Module):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, vocab_size: int,
                 slot_sizes: Sequence[int] = (1, 1, 1, 1, 1)):
        self.cfg = cfg
        self.seq_encoder = SeqEncoder(rng, SeqEncoderConfig(vocab_size, cfg.seq_max_len, cfg.seq_width,
                                                            cfg.seq_heads, cfg.seq_layers))
        self.graph_encoder = GraphEncoder(rng, cfg.graph_hidden, cfg.graph_width, cfg.graph_layers)
        self.projector = ModalityProjector(rng, cfg.seq_width, cfg.graph_width, cfg.llm_width,
                                           cfg.seq_max_len, vocab_size, cfg.smiles_tokens, cfg.graph_tokens,
                                           cfg.projector_heads, cfg.projector_depth)
        self.decoder = TinyDecoder(rng, vocab_size, cfg.llm_width, cfg.llm_heads, cfg.llm_layers,
                                   max_context=cfg.smiles_tokens + cfg.graph_tokens + cfg.max_text,
                                   max_target=cfg.max_target, slot_sizes=slot_sizes)

    def context(self, batch: Sequence[EncodedExample]) -> ContextTokens:
        x = self.seq_encoder.encode_batch([e.rxn_ids for e in batch])
        g = self.graph_encoder.reaction_embed_batch([e.record for e in batch])
        table = self.decoder.tok_embed
        s_tok = self.projector.project_smiles(x, table)
        g_tok = self.projector.project_graph(g, table)
        t_len = max(1, max(len(e.text_ids) for e in batch))
        text_ids = np.full((len(batch), t_len), PAD, dtype=np.int64)
        text_mask = np.zeros((len(batch), t_len), dtype=bool)
        for b, e in enumerate(batch):
            text_ids[b, :len(e.text_ids)] = e.text_ids
            text_mask[b, :len(e.text_ids)] = True
        tokens = assemble_context(s_tok, g_tok, self.decoder.embed_text(text_ids))
        fixed = np.ones((len(batch), s_tok.shape[1] + g_tok.shape[1]), dtype=bool)
        return ContextTokens(tokens, np.concatenate([fixed, text_mask], axis=1))

    def encode(self, batch: Sequence[EncodedExample]) -> ContextCache:
        return self.decoder.encode_context(self.context(batch))

    # -- losses ---------------------------------------------------------------
    def classification_loss(self, batch: Sequence[EncodedExample]) -> Tensor:
        labels = np.stack([e.slot_labels for e in batch])
        return classification_loss(self.decoder.slot_logits(self.encode(batch)), labels)

    def generation_loss(self, batch: Sequence[EncodedExample]) -> Tensor:
        prefix, target, mask = teacher_forcing([e.target_ids for e in batch])
        logits = self.decoder.decode(self.encode(batch), prefix)
        return generation_loss(logits, target, mask)

    def loss(self, batch: Sequence[EncodedExample], task: str) -> Tensor:
        if task == "classify":
            return self.classification_loss(batch)
        if task == "generate":
            return self.generation_loss(batch)
        raise ValueError(f"unknown task {task!r}")

    # -- inference ------------------------------------------------------------
    def slot_logits(self, batch: Sequence[EncodedExample]) -> list[np.ndarray]:
        with T.no_grad():
            return [l.data for l in self.decoder.slot_logits(self.encode(batch))]

    def sequence_logprob(self, example: EncodedExample, target_ids: Sequence[int]) -> float:
        """log P(target_ids | context); ``target_ids`` should end with EOS."""
        with T.no_grad():
            cache = self.encode([example])
            prefix, target, mask = teacher_forcing([list(target_ids)])
            logits = self.decoder.decode(cache, prefix)
            return -float(T.softmax_cross_entropy(logits, target, weights=mask, reduction="sum").data)

    def greedy(self, batch: Sequence[EncodedExample], max_len: Optional[int] = None) -> list[list[int]]:
        max_len = max_len or self.cfg.max_target
        with T.no_grad():
            cache = self.encode(batch)
            B = len(batch)
            prefix = np.full((B, 1), BOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            out: list[list[int]] = [[] for _ in range(B)]
            for _ in range(max_len):
                logits = self.decoder.decode(cache, prefix).data[:, -1]
                nxt = np.argmax(logits, axis=-1)
                for b in range(B):
                    if not done[b]:
                        if nxt[b] == EOS:
                            done[b] = True
                        else:
                            out[b].append(int(nxt[b]))
                if done.all():
                    break
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        return out

    def beam(self, example: EncodedExample, beam_width: int = 10, max_len: Optional[int] = None):
        max_len = max_len or self.cfg.max_target
        with T.no_grad():
            cache = self.encode([example])

            def step(prefixes: list[list[int]]) -> np.ndarray:
                n = len(prefixes)
                rep = ContextCache([Tensor(np.repeat(s.data, n, axis=0), dtype=s.data.dtype) for s in cache.states],
                                   np.repeat(cache.mask, n, axis=0))
                ids = np.asarray(prefixes, dtype=np.int64)
                logits = self.decoder.decode(rep, ids).data[:, -1]
                return T.log_softmax(Tensor(logits, dtype=logits.dtype)).data

            banned = [PAD, BOS, UNK] + [i for i in (self._sentinel_ids or ())]
            return beam_search(step, beam_width, max_len, banned=banned)

    _sentinel_ids: Optional[tuple[int, ...]] = None

    def set_vocab(self, tokens: TokenVocab) -> None:
        self._sentinel_ids = (tokens.id(SMILES_SENTINEL), tokens.id(GRAPH_SENTINEL))
