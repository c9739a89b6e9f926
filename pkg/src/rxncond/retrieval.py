"""Lexical corpus retriever over hashed SMILES-token n-gram fingerprints."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .smiles import ReactionRecord, split_reaction
from .vocab import smiles_tokens


def _molecule_tokens(reaction: str | ReactionRecord) -> list[tuple[str, list[str]]]:
    if isinstance(reaction, ReactionRecord):
        reactants, products = reaction.reactant_smiles, reaction.product_smiles
    else:
        reactants, products = split_reaction(reaction)
    return [("r", smiles_tokens(m)) for m in reactants] + [("p", smiles_tokens(m)) for m in products]


def fingerprint(reaction: str | ReactionRecord, width: int = 2048, seed: int = 0,
                ngrams: Sequence[int] = (1, 2, 3)) -> np.ndarray:
    """Count vector of hashed token n-grams.  N-grams stay inside one molecule
    and are keyed by side (reactant or product), so reactions with disjoint
    token sets share no n-gram."""
    fp = np.zeros(width, dtype=np.float64)
    key = seed.to_bytes(8, "little")
    for side, toks in _molecule_tokens(reaction):
        for n in ngrams:
            for i in range(len(toks) - n + 1):
                gram = "\x1f".join([side, *toks[i:i + n]]).encode("utf-8")
                h = int.from_bytes(hashlib.blake2b(gram, digest_size=8, key=key).digest(), "little")
                fp[h % width] += 1.0
    return fp


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(min(1.0, max(0.0, a @ b / (na * nb))))


@dataclass
class CorpusEntry:
    reaction_smiles: str
    corpus: str


class CorpusIndex:
    def __init__(self, entries: Sequence[CorpusEntry], width: int = 2048, seed: int = 0):
        if not entries:
            raise ValueError("corpus pool is empty")
        self.entries = list(entries)
        self.width, self.seed = width, seed
        fps = np.stack([fingerprint(e.reaction_smiles, width, seed) for e in self.entries])
        norms = np.linalg.norm(fps, axis=1, keepdims=True)
        self.unit = np.divide(fps, norms, out=np.zeros_like(fps), where=norms > 0)

    @classmethod
    def from_jsonl(cls, path: str | Path, **kw) -> "CorpusIndex":
        with open(path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        return cls([CorpusEntry(r["reaction_smiles"], r["corpus"]) for r in rows], **kw)

    def __len__(self) -> int:
        return len(self.entries)

    def retrieve(self, reaction: str | ReactionRecord, k: int = 1,
                 exclude_corpus: Optional[str] = None) -> list[tuple[str, float]]:
        """Top-k (corpus, cosine score), best first, ties in pool order.

        Entries whose paragraph equals ``exclude_corpus`` (the query's own paired
        text) are skipped.
        """
        if k <= 0:
            return []
        if isinstance(reaction, ReactionRecord) and exclude_corpus is None:
            exclude_corpus = reaction.corpus or None
        q = fingerprint(reaction, self.width, self.seed)
        qn = np.linalg.norm(q)
        scores = self.unit @ (q / qn) if qn > 0 else np.zeros(len(self.entries))
        scores = np.clip(scores, 0.0, 1.0)
        order = np.argsort(-scores, kind="stable")
        out = []
        for i in order:
            if exclude_corpus is not None and self.entries[i].corpus == exclude_corpus:
                continue
            out.append((self.entries[i].corpus, float(scores[i])))
            if len(out) == k:
                break
        return out


def retrieve_similar(reaction: str | ReactionRecord, pool: CorpusIndex, k: int = 1) -> list[tuple[str, float]]:
    return pool.retrieve(reaction, k)
