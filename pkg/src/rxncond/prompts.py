"""Instruction Q&A rendering from reaction records and question templates."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

from .smiles import SLOT_NAMES, ReactionRecord
from .vocab import GRAPH_SENTINEL, SMILES_SENTINEL

CORPUS = "<Corpus>"
REACTION = "<Reaction SMILES>"
PLACEHOLDERS = (CORPUS, REACTION, SMILES_SENTINEL, GRAPH_SENTINEL)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str

    def __post_init__(self):
        for ph in PLACEHOLDERS:
            n = self.text.count(ph)
            if n != 1:
                raise TemplateError(f"template {self.id!r} has {n} occurrences of {ph}, expected 1")


@dataclass
class InstructionExample:
    id: str
    question: str
    answer: str
    reaction_smiles: str
    corpus: str
    template_id: str
    seed: int
    slots: Optional[dict[str, str]] = None

    def to_json(self) -> dict:
        d = {"id": self.id, "question": self.question, "answer": self.answer,
             "reaction_smiles": self.reaction_smiles, "corpus": self.corpus,
             "template_id": self.template_id}
        if self.slots is not None:
            d["slots"] = dict(self.slots)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "InstructionExample":
        return cls(id=d["id"], question=d["question"], answer=d["answer"],
                   reaction_smiles=d["reaction_smiles"], corpus=d.get("corpus", ""),
                   template_id=d["template_id"], seed=int(d.get("seed", 0)), slots=d.get("slots"))


def load_templates(path: Optional[str | Path] = None) -> list[PromptTemplate]:
    """One template per non-blank line (``#`` comments); ``None`` loads the bundled bank."""
    if path is None:
        text = resources.files("rxncond.data").joinpath("templates.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    return [PromptTemplate(f"t{i:04d}", ln) for i, ln in enumerate(lines)]


def record_seed(global_seed: int, record_id: str, copy: int = 0) -> int:
    h = hashlib.blake2b(f"{global_seed}:{record_id}:{copy}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little") & 0x7FFFFFFF


def render_prompt(record: ReactionRecord, template: PromptTemplate, rng_seed: int) -> InstructionExample:
    for ph in PLACEHOLDERS:
        if ph not in template.text:
            raise TemplateError(f"template {template.id!r} is missing {ph}")
    question = (template.text.replace(CORPUS, record.corpus or "")
                .replace(REACTION, record.raw))
    question = " ".join(question.split())
    slots = dict(zip(SLOT_NAMES, record.slots)) if record.slots is not None else None
    answer = record.answer
    if not answer:
        answer = "NONE"
    return InstructionExample(id=record.id, question=question, answer=answer,
                              reaction_smiles=record.raw, corpus=record.corpus or "",
                              template_id=template.id, seed=rng_seed, slots=slots)


def build_qa_dataset(records: Iterable[ReactionRecord], templates: Sequence[PromptTemplate],
                     rng_seed: int, expand: int = 1) -> Iterator[InstructionExample]:
    """Yield ``expand`` examples per record, each with a uniformly drawn template.

    Draws use a generator seeded from (rng_seed, record id, copy index), so a
    record's examples do not depend on which other records are present.
    """
    if not templates:
        raise TemplateError("empty template bank")
    if expand < 1:
        raise ValueError("expand must be >= 1")
    for rec in records:
        for copy in range(expand):
            seed = record_seed(rng_seed, rec.id, copy)
            t = templates[int(np.random.default_rng(seed).integers(len(templates)))]
            ex = render_prompt(rec, t, seed)
            if expand > 1:
                ex.id = f"{rec.id}#{copy}"
            yield ex


def write_jsonl(examples: Iterable[InstructionExample], fh: IO[str]) -> int:
    n = 0
    for ex in examples:
        fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
        n += 1
    return n


def read_jsonl(path: str | Path) -> list[InstructionExample]:
    with open(path, encoding="utf-8") as fh:
        return [InstructionExample.from_json(json.loads(line)) for line in fh if line.strip()]
