"""Seeded synthetic reaction datasets for overfitting and determinism runs."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .smiles import NONE_LABEL, SLOT_NAMES

FRAGMENTS = (
    "C", "CC", "CCC", "C(C)C", "C=O", "C(=O)O", "N", "O", "c1ccccc1", "C1CCCCC1", "C#N", "Cl", "Br",
    "F", "S", "C(F)(F)F", "c1ccncc1", "OC", "N(C)C", "C1CCOC1", "C(=O)N", "c1ccc(O)cc1", "CO", "I",
)
CATALYSTS = ("[Pd]", "[Zn]", "[Cu]", "[Ni]", "[Fe]", "[Pt]", "[Rh]", "[Ru]")
SOLVENTS = ("C1CCOC1", "ClCCl", "CN(C)C=O", "CO", "O", "CC#N")
REAGENTS = ("[Na+].[OH-]", "[Cl-].[NH4+]", "CCN(CC)CC", "O=C([O-])[O-].[K+].[K+]", "Cl",
            "CC(=O)O", "[BH4-].[Na+]", "N", "O=S(Cl)Cl", "CC(C)(C)[O-].[K+]")
PHRASES = (
    "The mixture was stirred at room temperature overnight.",
    "The solution was heated to reflux for 3 h.",
    "After cooling the product was filtered and dried.",
    "The reaction was quenched with water and extracted.",
    "The residue was purified by column chromatography.",
    "",
)


# fragments whose last atom has no free valence; they may only end a chain
TERMINAL = frozenset({"Cl", "Br", "F", "I", "C#N", "C=O", "C(F)(F)F"})
_OPEN = tuple(f for f in FRAGMENTS if f not in TERMINAL)


def random_molecule(rng: np.random.Generator, min_frags: int = 1, max_frags: int = 3,
                    open_end: bool = False) -> str:
    """Chain of fragments bonded last-atom to first-atom.  Terminal fragments
    only appear last (never with ``open_end``) so every join respects valence."""
    n = int(rng.integers(min_frags, max_frags + 1))
    parts = [_OPEN[int(i)] for i in rng.integers(len(_OPEN), size=n - 1)]
    pool = _OPEN if open_end else FRAGMENTS
    parts.append(pool[int(rng.integers(len(pool)))])
    return "".join(parts)


def random_reactions(n: int, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out = []
    while len(out) < n:
        a, b = random_molecule(rng, open_end=True), random_molecule(rng)
        rxn = f"{a}.{b}>>{a}{b}"
        if rxn not in seen:
            seen.add(rxn)
            out.append(rxn)
    return out


def condition_rows(n: int = 128, seed: int = 0, corpus: bool = True) -> list[dict]:
    """Slot-flavor rows with 8 catalysts, 6 solvents and 10 reagents."""
    rng = np.random.default_rng(seed + 1)
    rows = []
    for i, rxn in enumerate(random_reactions(n, seed)):
        pick = lambda pool, p_none=0.0: (NONE_LABEL if rng.random() < p_none else pool[int(rng.integers(len(pool)))])
        slots = (pick(CATALYSTS, 0.3), pick(SOLVENTS), pick(SOLVENTS, 0.6), pick(REAGENTS), pick(REAGENTS, 0.6))
        row = {"id": f"rxn{i:05d}", "rxn_smiles": rxn}
        row.update({s: ("" if v == NONE_LABEL else v) for s, v in zip(SLOT_NAMES, slots)})
        row["corpus"] = PHRASES[int(rng.integers(len(PHRASES)))] if corpus else ""
        rows.append(row)
    return rows


def joined_rows(n: int = 64, seed: int = 0, corpus: bool = True) -> list[dict]:
    """Joined-flavor rows: 1-3 dot-joined species per reaction."""
    rng = np.random.default_rng(seed + 2)
    pool = SOLVENTS + REAGENTS[:6]
    rows = []
    for i, rxn in enumerate(random_reactions(n, seed)):
        k = int(rng.integers(1, 4))
        species = [pool[int(j)] for j in rng.choice(len(pool), size=k, replace=False)]
        rows.append({"id": f"rxn{i:05d}", "rxn_smiles": rxn, "conditions": ".".join(species),
                     "corpus": PHRASES[int(rng.integers(len(PHRASES)))] if corpus else ""})
    return rows


def write_csv(rows: list[dict], path: str | Path, fields: Optional[list[str]] = None) -> Path:
    path = Path(path)
    fields = fields or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def fixture_records(kind: str, n: int, seed: int = 0, corpus: bool = True):
    """Parsed records for the classification ("classify") or generation ("generate") fixture."""
    from .smiles import parse_reaction
    if kind == "classify":
        return [parse_reaction(r["rxn_smiles"], id=r["id"], corpus=r["corpus"],
                               slots=tuple(r[s] or NONE_LABEL for s in SLOT_NAMES))
                for r in condition_rows(n, seed, corpus)]
    if kind == "generate":
        return [parse_reaction(r["rxn_smiles"], id=r["id"], corpus=r["corpus"], joined_conditions=r["conditions"],
                               species=r["conditions"].split("."))
                for r in joined_rows(n, seed, corpus)]
    raise ValueError(f"unknown fixture kind {kind!r}")


def write_fixture_dataset(kind: str, out_dir: str | Path, n: int, seed: int = 0, corpus: bool = True) -> Path:
    """Dataset directory whose every split holds all ``n`` fixture records (for overfit runs)."""
    import json
    from .dataset import build_vocabs
    from .prompts import build_qa_dataset, load_templates, write_jsonl
    from .vocab import vocab_hash

    recs = fixture_records(kind, n, seed, corpus)
    examples = list(build_qa_dataset(recs, load_templates(), seed))
    conds, tokens = build_vocabs(recs, texts=[e.question for e in examples])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        with open(out / f"{split}.jsonl", "w", encoding="utf-8") as fh:
            write_jsonl(examples, fh)
    (out / "vocab.json").write_text(json.dumps({"tokens": tokens.to_json(), "conds": conds.to_json(),
                                                "hash": vocab_hash(tokens, conds)}, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return out
