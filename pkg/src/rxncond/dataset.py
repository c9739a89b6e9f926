"""Dataset ingestion, splitting, vocabularies and corpus statistics."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .smiles import NONE_LABEL, SLOT_NAMES, ReactionRecord, SmilesError, parse_reaction, split_condition_string
from .vocab import CondVocab, TokenVocab, smiles_tokens, text_tokens

log = logging.getLogger(__name__)

CONDITION_COLUMNS = {"id": "id", "rxn_smiles": "rxn_smiles", **{s: s for s in SLOT_NAMES}, "corpus": "corpus"}
JOINED_COLUMNS = {"id": "id", "rxn_smiles": "rxn_smiles", "conditions": "conditions", "corpus": "corpus"}


class DataError(ValueError):
    pass


@dataclass
class LoadResult:
    records: list[ReactionRecord]
    skipped: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _read_rows(path: str | Path, columns: Mapping[str, str], required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [columns[c] for c in required if columns[c] not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        for row in reader:
            yield reader.line_num, row


def _cell(row: dict, columns: Mapping[str, str], key: str) -> str:
    name = columns.get(key)
    value = row.get(name) if name else None
    return (value or "").strip()


def load_condition_csv(path: str | Path, strict: bool = False,
                       columns: Optional[Mapping[str, str]] = None) -> LoadResult:
    """Slot-flavor CSV: id, rxn_smiles, five condition columns, optional corpus."""
    cols = {**CONDITION_COLUMNS, **(columns or {})}
    out = LoadResult([])
    for line, row in _read_rows(path, cols, ["id", "rxn_smiles", *SLOT_NAMES]):
        try:
            slots = tuple(_cell(row, cols, s) or NONE_LABEL for s in SLOT_NAMES)
            rec = parse_reaction(_cell(row, cols, "rxn_smiles"), id=_cell(row, cols, "id") or f"line{line}",
                                 slots=slots, corpus=_cell(row, cols, "corpus"))
        except (SmilesError, ValueError) as exc:
            if strict:
                raise DataError(f"{path}:{line}: {exc}") from exc
            out.skipped += 1
            out.errors.append((line, str(exc)))
            continue
        out.records.append(rec)
    if out.skipped:
        log.warning("%s: skipped %d malformed row(s)", path, out.skipped)
    return out


def load_500mt_csv(path: str | Path, strict: bool = False, grouping: Sequence[tuple[str, ...]] = (),
                   columns: Optional[Mapping[str, str]] = None) -> LoadResult:
    """Joined-flavor CSV: id, rxn_smiles, dot-joined conditions, optional corpus."""
    cols = {**JOINED_COLUMNS, **(columns or {})}
    out = LoadResult([])
    for line, row in _read_rows(path, cols, ["id", "rxn_smiles", "conditions"]):
        try:
            joined = _cell(row, cols, "conditions")
            if joined:
                smiles_tokens(joined)
            rec = parse_reaction(_cell(row, cols, "rxn_smiles"), id=_cell(row, cols, "id") or f"line{line}",
                                 joined_conditions=joined,
                                 species=split_condition_string(joined, grouping),
                                 corpus=_cell(row, cols, "corpus"))
        except (SmilesError, ValueError) as exc:
            if strict:
                raise DataError(f"{path}:{line}: {exc}") from exc
            out.skipped += 1
            out.errors.append((line, str(exc)))
            continue
        out.records.append(rec)
    if out.skipped:
        log.warning("%s: skipped %d malformed row(s)", path, out.skipped)
    return out


def split_811(records: Sequence, seed: int) -> tuple[list, list, list]:
    """Seeded shuffle into train/valid/test at 8:1:1; the remainder goes to train."""
    n = len(records)
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = n_test = n // 10
    n_train = n - n_valid - n_test
    train = [records[i] for i in order[:n_train]]
    valid = [records[i] for i in order[n_train:n_train + n_valid]]
    test = [records[i] for i in order[n_train + n_valid:]]
    return train, valid, test


def sparsity_report(records: Iterable[ReactionRecord]) -> dict[str, dict[str, float]]:
    counts = Counter()
    total = 0
    for rec in records:
        if rec.slots is None:
            raise DataError("sparsity_report needs slot-flavor records")
        total += 1
        for name, label in zip(SLOT_NAMES, rec.slots):
            if label != NONE_LABEL:
                counts[name] += 1
    return {name: {"non_empty_count": counts[name],
                   "density": (counts[name] / total) if total else 0.0}
            for name in SLOT_NAMES}


@dataclass
class PowerLawFit:
    alpha: float
    xmin: float
    fit_quality: float  # KS distance on the tail
    n_tail: int


def power_law_fit(counts: Sequence[float], min_tail: int = 10) -> PowerLawFit:
    """Continuous maximum-likelihood power-law fit with KS-selected ``xmin``.

    For each candidate ``xmin`` the exponent is ``1 + n / sum(ln(x / xmin))``
    over ``x >= xmin``; the candidate with the smallest KS distance between the
    tail's empirical CDF and the fitted CDF wins.
    """
    x = np.sort(np.asarray([c for c in counts if c > 0], dtype=np.float64))
    if len(x) < 20:
        raise DataError(f"power-law fit needs at least 20 positive categories, got {len(x)}")
    if x[0] == x[-1]:
        raise DataError("degenerate input: all counts are equal")
    logs = np.log(x)
    suffix = np.cumsum(logs[::-1])[::-1]
    best: Optional[PowerLawFit] = None
    for xmin in np.unique(x):
        i = int(np.searchsorted(x, xmin, side="left"))
        n = len(x) - i
        if n < min_tail:
            break
        denom = suffix[i] - n * np.log(xmin)
        if denom <= 0:
            continue
        alpha = 1.0 + n / denom
        tail = x[i:]
        cdf = 1.0 - (tail / xmin) ** (1.0 - alpha)
        emp_hi = np.arange(1, n + 1) / n
        emp_lo = np.arange(0, n) / n
        ks = float(max(np.max(np.abs(emp_hi - cdf)), np.max(np.abs(cdf - emp_lo))))
        if best is None or ks < best.fit_quality:
            best = PowerLawFit(float(alpha), float(xmin), ks, n)
    if best is None:
        raise DataError("degenerate input: no admissible xmin")
    return best


def sample_power_law(alpha: float, n: int, xmin: float = 1.0, seed: int = 0) -> np.ndarray:
    """Inverse-transform samples from a continuous power law with exponent ``alpha``."""
    u = np.random.default_rng(seed).random(n)
    return xmin * (1.0 - u) ** (-1.0 / (alpha - 1.0))


def build_vocabs(train_records: Sequence[ReactionRecord], all_records: Sequence[ReactionRecord] = (),
                 texts: Iterable[str] = ()) -> tuple[CondVocab, TokenVocab]:
    """Slot vocabularies from the training split only, frequency ordered; token
    vocabulary from every reaction and condition string plus the given texts."""
    conds = CondVocab.from_records(r.slots for r in train_records if r.slots is not None)
    tokens = TokenVocab()
    for rec in list(train_records) + list(all_records):
        for t in smiles_tokens(rec.raw):
            tokens.add(t)
        answer = rec.answer
        if answer:
            for t in smiles_tokens(answer):
                tokens.add(t)
    for text in texts:
        for t in text_tokens(text):
            tokens.add(t)
    return conds, tokens


def species_counts(records: Iterable[ReactionRecord]) -> Counter:
    c = Counter()
    for rec in records:
        if rec.species is not None:
            c.update(rec.species)
        elif rec.slots is not None:
            c.update(x for x in rec.slots if x != NONE_LABEL)
    return c


def load_records(path: str | Path, flavor: str, strict: bool = False,
                 grouping: Optional[Sequence[tuple[str, ...]]] = None) -> LoadResult:
    if flavor == "condition":
        return load_condition_csv(path, strict)
    if flavor == "500mt":
        from .smiles import load_grouping
        return load_500mt_csv(path, strict, load_grouping() if grouping is None else grouping)
    raise DataError(f"unknown flavor {flavor!r}; expected 'condition' or '500mt'")


def attach_retrieved_corpus(records: Sequence[ReactionRecord], pool) -> list[ReactionRecord]:
    """Replace each record's corpus with the most similar pool paragraph, never its own."""
    out = []
    for rec in records:
        hits = pool.retrieve(rec, 1, exclude_corpus=rec.corpus or None)
        out.append(replace(rec, corpus=hits[0][0] if hits else ""))
    return out


def build_dataset(input_path: str | Path, flavor: str, output: str | Path, seed: int = 0,
                  expand: int = 1, templates: Optional[str | Path] = None, pool=None,
                  strict: bool = False) -> dict:
    """CSV -> split instruction JSONL files plus ``vocab.json`` and ``build.json``."""
    from .prompts import build_qa_dataset, load_templates, write_jsonl
    from .vocab import vocab_hash

    loaded = load_records(input_path, flavor, strict)
    records = loaded.records
    if pool is not None:
        records = attach_retrieved_corpus(records, pool)
    bank = load_templates(templates)
    parts = dict(zip(("train", "valid", "test"), split_811(records, seed)))
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    texts = []
    counts = {}
    for name, recs in parts.items():
        examples = list(build_qa_dataset(recs, bank, seed, expand))
        texts.extend(e.question for e in examples)
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            counts[name] = write_jsonl(examples, fh)
    conds, tokens = build_vocabs(parts["train"], records, texts)
    h = vocab_hash(tokens, conds)
    (out / "vocab.json").write_text(json.dumps({"tokens": tokens.to_json(), "conds": conds.to_json(), "hash": h},
                                               sort_keys=True) + "\n", encoding="utf-8")
    info = {"input": str(input_path), "flavor": flavor, "seed": seed, "expand": expand,
            "records": len(records), "skipped": loaded.skipped, "examples": counts,
            "templates": len(bank), "retrieval": pool is not None, "vocab_hash": h}
    (out / "build.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return info


def corpus_stats(records: Sequence[ReactionRecord]) -> dict:
    """Sparsity (slot flavor) and a power-law fit of species frequencies."""
    out: dict = {"records": len(records)}
    if records and all(r.slots is not None for r in records):
        out["sparsity"] = sparsity_report(records)
    counts = species_counts(records)
    out["species"] = len(counts)
    try:
        fit = power_law_fit(list(counts.values()))
        out["power_law"] = {"alpha": fit.alpha, "xmin": fit.xmin, "ks": fit.fit_quality, "n_tail": fit.n_tail}
    except DataError as exc:
        out["power_law"] = {"error": str(exc)}
    return out
