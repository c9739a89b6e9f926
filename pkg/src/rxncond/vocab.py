"""Token and condition-label vocabularies."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from typing import Iterable, Optional, Sequence

from .smiles import NONE_LABEL, SLOT_NAMES, SmilesError, TokenKind, split_reaction, tokenize_smiles

PAD, BOS, EOS, DOT = 0, 1, 2, 3
UNK = 4
SMILES_SENTINEL = "<SMILES>"
GRAPH_SENTINEL = "<Graph>"
ARROW = ">>"
SPECIALS = ("<pad>", "<bos>", "<eos>", ".", "<unk>", SMILES_SENTINEL, GRAPH_SENTINEL, ARROW)

UNK_LABEL = "<UNK>"
UNK_INDEX = -1

_WORD_RE = re.compile(r"^[A-Za-z][a-z]+[,;:?!.]?$|^[a-z]+[,;:?!.]?$")
_FALLBACK_RE = re.compile(r"[A-Za-z]+|\d+|\S")


def smiles_tokens(s: str) -> list[str]:
    """Token texts of a SMILES string, a reaction (``>>``) or a condition string."""
    if ARROW in s:
        left, right = s.split(ARROW, 1)
        out = smiles_tokens(left) if left else []
        out.append(ARROW)
        if right:
            out.extend(smiles_tokens(right))
        return out
    return [t.text for t in tokenize_smiles(s)]


def text_tokens(text: str) -> list[str]:
    """Whitespace chunks; prose words are lowercased, chemistry is SMILES-tokenized."""
    out: list[str] = []
    for chunk in text.split():
        if chunk in (SMILES_SENTINEL, GRAPH_SENTINEL):
            out.append(chunk)
            continue
        if _WORD_RE.match(chunk):
            word = chunk.rstrip(",;:?!.")
            out.append(word.lower())
            if word != chunk:
                out.append(chunk[len(word):])
            continue
        try:
            out.extend(smiles_tokens(chunk))
        except SmilesError:
            out.extend(t.lower() for t in _FALLBACK_RE.findall(chunk))
    return out


class TokenVocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode_tokens(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def encode_text(self, text: str) -> list[int]:
        return self.encode_tokens(text_tokens(text))

    def encode_condition(self, s: str) -> list[int]:
        """Generation target: condition tokens followed by EOS."""
        return (self.encode_tokens(smiles_tokens(s)) if s else []) + [EOS]

    def decode_condition(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else "<unk>")
        return "".join(out)

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, itos: list[str]) -> "TokenVocab":
        if tuple(itos[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("token vocabulary does not start with the reserved specials")
        return cls(itos[len(SPECIALS):])


class CondVocab:
    """Per-slot label vocabularies with NONE at index 0."""

    def __init__(self, slots: Optional[dict[str, list[str]]] = None):
        slots = slots or {name: [NONE_LABEL] for name in SLOT_NAMES}
        self.itos: dict[str, list[str]] = {}
        self.stoi: dict[str, dict[str, int]] = {}
        for name in SLOT_NAMES:
            labels = list(slots.get(name, [NONE_LABEL]))
            if not labels or labels[0] != NONE_LABEL:
                labels = [NONE_LABEL] + [x for x in labels if x != NONE_LABEL]
            self.itos[name] = labels
            self.stoi[name] = {lab: i for i, lab in enumerate(labels)}

    @classmethod
    def from_records(cls, slot_tuples: Iterable[Sequence[str]]) -> "CondVocab":
        counts = {name: Counter() for name in SLOT_NAMES}
        for slots in slot_tuples:
            for name, label in zip(SLOT_NAMES, slots):
                if label != NONE_LABEL:
                    counts[name][label] += 1
        return cls({name: [NONE_LABEL] + sorted(c, key=lambda lab: (-c[lab], lab))
                    for name, c in counts.items()})

    def size(self, slot: str) -> int:
        return len(self.itos[slot])

    def sizes(self) -> list[int]:
        return [self.size(s) for s in SLOT_NAMES]

    def encode(self, slot: str, label: str) -> int:
        return self.stoi[slot].get(label, UNK_INDEX)

    def decode(self, slot: str, index: int) -> str:
        return UNK_LABEL if index == UNK_INDEX else self.itos[slot][index]

    def to_json(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self.itos.items()}

    @classmethod
    def from_json(cls, data: dict[str, list[str]]) -> "CondVocab":
        return cls(data)


def vocab_hash(tokens: TokenVocab, conds: CondVocab) -> str:
    blob = json.dumps({"tokens": tokens.to_json(), "conds": conds.to_json()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def reaction_tokens(rxn: str) -> list[str]:
    split_reaction(rxn)
    return smiles_tokens(rxn)


__all__ = [
    "PAD", "BOS", "EOS", "DOT", "UNK", "SMILES_SENTINEL", "GRAPH_SENTINEL", "ARROW", "SPECIALS",
    "UNK_LABEL", "UNK_INDEX", "TokenVocab", "CondVocab", "vocab_hash", "smiles_tokens",
    "text_tokens", "reaction_tokens", "TokenKind",
]
