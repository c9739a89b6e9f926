"""Top-k accuracy metrics, partial matching and report files."""
from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .smiles import SLOT_NAMES, split_condition_string

DEFAULT_KS = (1, 3, 5, 10)
COMMON_SOLVENTS = frozenset({
    "O", "CO", "CCO", "ClCCl", "C1CCOC1", "CC#N", "CN(C)C=O", "CS(C)=O", "CCOC(C)=O",
    "Cc1ccccc1", "C1COCCO1", "ClC(Cl)Cl", "CC(C)O", "c1ccccc1", "CCCCCC",
})
ROLES = ("reagent", "catalyst", "solvent")
CSV_FIELDS = ("model", "slot", "k", "accuracy")


class MetricError(ValueError):
    pass


def topk_strict(preds: Sequence[Mapping[str, Sequence[str]]], truth: Sequence[Mapping[str, str]],
                ks: Sequence[int] = DEFAULT_KS, slots: Sequence[str] = SLOT_NAMES) -> dict[str, dict[int, float]]:
    """Per-slot hit@k: the true label is among the first k ranked labels."""
    if len(preds) != len(truth):
        raise MetricError("prediction and truth lists differ in length")
    kmax = max(ks)
    hits = {s: Counter() for s in slots}
    for p, t in zip(preds, truth):
        for s in slots:
            if s not in p or s not in t:
                raise MetricError(f"missing slot {s!r}")
            ranked = list(p[s])
            if len(ranked) < kmax:
                raise MetricError(f"slot {s!r}: ranked list shorter than k={kmax}")
            try:
                rank = ranked.index(t[s])
            except ValueError:
                continue
            for k in ks:
                if rank < k:
                    hits[s][k] += 1
    n = len(truth)
    return {s: {k: (hits[s][k] / n if n else 0.0) for k in ks} for s in slots}


def species_multiset(s: str, grouping: Sequence[tuple[str, ...]] = ()) -> Counter:
    return Counter(split_condition_string(s, grouping))


def topk_sequence(cands: Sequence[Sequence[str]], truth: Sequence[str], ks: Sequence[int] = DEFAULT_KS,
                  grouping: Sequence[tuple[str, ...]] = ()) -> dict[int, float]:
    """hit@k: one of the first k candidates has the same species multiset as the truth."""
    if len(cands) != len(truth):
        raise MetricError("candidate and truth lists differ in length")
    hits = Counter()
    for cand, t in zip(cands, truth):
        target = species_multiset(t, grouping)
        first = next((i for i, c in enumerate(cand) if species_multiset(c, grouping) == target), None)
        if first is None:
            continue
        for k in ks:
            if first < k:
                hits[k] += 1
    n = len(truth)
    return {k: (hits[k] / n if n else 0.0) for k in ks}


def partial_match(pred: str, truth: str | Iterable[str], grouping: Sequence[tuple[str, ...]] = (),
                  role: str = "reagent", lenient: bool = False,
                  common_solvents: Iterable[str] = COMMON_SOLVENTS) -> int:
    """1 iff every predicted species belongs to the ground-truth species set.

    In lenient mode predicted species from ``common_solvents`` are ignored.
    """
    if role not in ROLES:
        raise MetricError(f"role must be one of {ROLES}, got {role!r}")
    if isinstance(truth, str):
        truth_set = set(split_condition_string(truth, grouping))
    else:
        truth_set = set()
        for t in truth:
            truth_set.update(split_condition_string(t, grouping))
    predicted = split_condition_string(pred, grouping)
    if lenient:
        ignore = set(common_solvents)
        kept = [p for p in predicted if p not in ignore]
        if predicted and not kept:
            return 1
        predicted = kept
    if not predicted:
        return int(not truth_set)
    return int(all(p in truth_set for p in predicted))


def overall_top1(per_slot: Mapping[str, Mapping[int, float]]) -> float:
    vals = [per_slot[s][1] for s in per_slot if 1 in per_slot[s]]
    return sum(vals) / len(vals) if vals else 0.0


def long_rows(results: Sequence[Mapping]) -> list[dict]:
    """Flatten result dicts ({"model", "topk": {slot: {k: acc}}}) into CSV rows."""
    rows = []
    for res in results:
        for slot, by_k in res.get("topk", {}).items():
            for k, acc in sorted(by_k.items(), key=lambda kv: int(kv[0])):
                rows.append({"model": res["model"], "slot": slot, "k": int(k), "accuracy": float(acc)})
    return rows


def emit_report(results: Sequence[Mapping], out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` (full results) and ``<stem>.csv`` (model, slot, k, accuracy)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"

    def _clean(obj):
        if isinstance(obj, Mapping):
            return {str(k): _clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [_clean(v) for v in obj]
        return obj

    json_path.write_text(json.dumps(_clean(list(results)), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in long_rows(results):
            w.writerow({**row, "accuracy": repr(row["accuracy"])})
    return json_path, csv_path


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"model": r["model"], "slot": r["slot"], "k": int(r["k"]), "accuracy": float(r["accuracy"])}
                for r in csv.DictReader(fh)]
