"""SMILES tokenization, molecule graphs and reaction/condition string splitting.

Supported subset: organic-subset atoms (B C N O P S F Cl Br I, aromatic
b c n o p s), bracket atoms with isotope, chirality, H count and charge,
bonds ``- = # :``, stereo bonds ``/ \\`` (treated as single), ring closures
``0-9`` and ``%nn``, branches and ``.``.  ``*`` is a wildcard atom.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

NONE_LABEL = "NONE"
SLOT_NAMES = ("catalyst", "solvent1", "solvent2", "reagent1", "reagent2")


class SmilesError(ValueError):
    pass


class TokenKind(str, Enum):
    ATOM = "Atom"
    BRACKET_ATOM = "BracketAtom"
    BOND = "Bond"
    RING_BOND = "RingBond"
    BRANCH_OPEN = "BranchOpen"
    BRANCH_CLOSE = "BranchClose"
    DOT = "Dot"


@dataclass(frozen=True)
class SmilesToken:
    kind: TokenKind
    text: str
    position: int


_ORGANIC = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_BONDS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic", "/": "single", "\\": "single"}


def tokenize_smiles(s: str) -> list[SmilesToken]:
    if not s:
        raise SmilesError("empty SMILES string")
    tokens: list[SmilesToken] = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c == "[":
            j = s.find("]", i + 1)
            if j < 0 or "[" in s[i + 1:j]:
                raise SmilesError(f"unbalanced bracket at position {i} in {s!r}")
            if j == i + 1:
                raise SmilesError(f"empty bracket atom at position {i}")
            tokens.append(SmilesToken(TokenKind.BRACKET_ATOM, s[i:j + 1], i))
            i = j + 1
        elif c == "]":
            raise SmilesError(f"unbalanced bracket at position {i} in {s!r}")
        elif s.startswith("Cl", i) or s.startswith("Br", i):
            tokens.append(SmilesToken(TokenKind.ATOM, s[i:i + 2], i))
            i += 2
        elif c in _ORGANIC or c in _AROMATIC_ORGANIC or c == "*":
            tokens.append(SmilesToken(TokenKind.ATOM, c, i))
            i += 1
        elif c in _BONDS:
            tokens.append(SmilesToken(TokenKind.BOND, c, i))
            i += 1
        elif c.isdigit():
            tokens.append(SmilesToken(TokenKind.RING_BOND, c, i))
            i += 1
        elif c == "%":
            if len(s[i + 1:i + 3]) == 2 and s[i + 1:i + 3].isdigit():
                tokens.append(SmilesToken(TokenKind.RING_BOND, s[i:i + 3], i))
                i += 3
            else:
                raise SmilesError(f"dangling '%' at position {i} in {s!r}")
        elif c == "(":
            tokens.append(SmilesToken(TokenKind.BRANCH_OPEN, c, i))
            i += 1
        elif c == ")":
            tokens.append(SmilesToken(TokenKind.BRANCH_CLOSE, c, i))
            i += 1
        elif c == ".":
            tokens.append(SmilesToken(TokenKind.DOT, c, i))
            i += 1
        else:
            raise SmilesError(f"illegal character {c!r} at position {i} in {s!r}")
    return tokens


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    hydrogens: int = 0


@dataclass
class Bond:
    i: int
    j: int
    order: str  # single | double | triple | aromatic


@dataclass
class Molecule:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    smiles: str = ""

    def __len__(self) -> int:
        return len(self.atoms)


_BRACKET_RE = re.compile(
    r"^\[(?P<isotope>\d+)?(?P<symbol>\*|[A-Z][a-z]?|se|as|te|[bcnops])"
    r"(?P<chiral>@{1,2}(?:TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?(?P<charge>[+-]{1,2}\d*)?(?P<cls>:\d+)?\]$"
)


def _parse_bracket(text: str) -> Atom:
    m = _BRACKET_RE.match(text)
    if m is None:
        raise SmilesError(f"malformed bracket atom {text!r}")
    sym = m.group("symbol")
    aromatic = sym.islower()
    element = sym if sym == "*" else sym.capitalize()
    h = m.group("hcount")
    hydrogens = 0 if h is None else (int(h[1:]) if len(h) > 1 else 1)
    q = m.group("charge")
    charge = 0
    if q:
        sign = 1 if q[0] == "+" else -1
        rest = q[1:]
        if rest.isdigit():
            charge = sign * int(rest)
        elif rest == q[0]:
            charge = 2 * sign
        elif rest == "":
            charge = sign
        else:
            raise SmilesError(f"malformed charge in {text!r}")
    return Atom(element, aromatic, charge, hydrogens)


def _organic_atom(text: str) -> Atom:
    if text == "*":
        return Atom("*")
    if text in _AROMATIC_ORGANIC:
        return Atom(text.upper(), aromatic=True)
    return Atom(text)


def parse_molecule(s: str) -> Molecule:
    mol = Molecule(smiles=s)
    prev: Optional[int] = None
    pending: Optional[str] = None
    branches: list[Optional[int]] = []
    rings: dict[str, tuple[int, Optional[str]]] = {}
    seen_pairs: set[tuple[int, int]] = set()

    def connect(a: int, b: int, order: Optional[str]) -> None:
        if a == b:
            raise SmilesError(f"atom bonded to itself in {s!r}")
        key = (min(a, b), max(a, b))
        if key in seen_pairs:
            raise SmilesError(f"duplicate bond between atoms {a} and {b} in {s!r}")
        seen_pairs.add(key)
        if order is None:
            order = "aromatic" if mol.atoms[a].aromatic and mol.atoms[b].aromatic else "single"
        mol.bonds.append(Bond(a, b, order))

    for tok in tokenize_smiles(s):
        kind = tok.kind
        if kind in (TokenKind.ATOM, TokenKind.BRACKET_ATOM):
            atom = _parse_bracket(tok.text) if kind is TokenKind.BRACKET_ATOM else _organic_atom(tok.text)
            mol.atoms.append(atom)
            idx = len(mol.atoms) - 1
            if prev is not None:
                connect(prev, idx, pending)
            elif pending is not None:
                raise SmilesError(f"bond with no preceding atom at position {tok.position} in {s!r}")
            pending = None
            prev = idx
        elif kind is TokenKind.BOND:
            if pending is not None:
                raise SmilesError(f"consecutive bonds at position {tok.position} in {s!r}")
            pending = _BONDS[tok.text]
        elif kind is TokenKind.RING_BOND:
            if prev is None:
                raise SmilesError(f"ring bond with no atom at position {tok.position} in {s!r}")
            label = tok.text.lstrip("%")
            if label in rings:
                other, order = rings.pop(label)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError(f"conflicting ring bond orders for {tok.text} in {s!r}")
                connect(other, prev, pending or order)
            else:
                rings[label] = (prev, pending)
            pending = None
        elif kind is TokenKind.BRANCH_OPEN:
            if prev is None:
                raise SmilesError(f"branch with no atom at position {tok.position} in {s!r}")
            branches.append(prev)
        elif kind is TokenKind.BRANCH_CLOSE:
            if not branches or pending is not None:
                raise SmilesError(f"unbalanced ')' at position {tok.position} in {s!r}")
            prev = branches.pop()
        elif kind is TokenKind.DOT:
            if pending is not None or branches:
                raise SmilesError(f"misplaced '.' at position {tok.position} in {s!r}")
            prev = None
    if pending is not None:
        raise SmilesError(f"trailing bond in {s!r}")
    if branches:
        raise SmilesError(f"unclosed branch in {s!r}")
    if rings:
        raise SmilesError(f"unclosed ring bond(s) {sorted(rings)} in {s!r}")
    if not mol.atoms:
        raise SmilesError(f"no atoms in {s!r}")
    return mol


def split_reaction(s: str) -> tuple[list[str], list[str]]:
    s = s.strip()
    if s.count(">>") != 1:
        raise SmilesError(f"reaction must contain exactly one '>>': {s!r}")
    left, right = s.split(">>")
    reactants = [p for p in left.split(".") if p]
    products = [p for p in right.split(".") if p]
    if not reactants or not products:
        raise SmilesError(f"reaction needs reactants and products: {s!r}")
    return reactants, products


# -- condition grouping -------------------------------------------------------
Grouping = list[tuple[str, ...]]


def parse_grouping(lines: Iterable[str]) -> Grouping:
    groups: Grouping = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            groups.append(tuple(line.split(".")))
    return groups


def load_grouping(path: Optional[str | Path] = None) -> Grouping:
    """Read a curated multi-fragment list; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("rxncond.data").joinpath("ion_pairs.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_grouping(text.splitlines())


def split_condition_string(s: str, grouping: Sequence[tuple[str, ...]] = ()) -> list[str]:
    """Split a dot-joined condition string into species.

    Runs of adjacent fragments matching a curated group (in any order) are
    merged back into one species written in the group's curated order.
    """
    s = s.strip()
    if not s:
        return []
    frags = [f.strip() for f in s.split(".") if f.strip()]
    groups = sorted(grouping, key=len, reverse=True)
    out: list[str] = []
    i = 0
    while i < len(frags):
        for g in groups:
            window = frags[i:i + len(g)]
            if len(g) > 1 and len(window) == len(g) and sorted(window) == sorted(g):
                out.append(".".join(g))
                i += len(g)
                break
        else:
            out.append(frags[i])
            i += 1
    return out


@dataclass
class ReactionRecord:
    raw: str
    reactants: list[Molecule]
    products: list[Molecule]
    id: str = ""
    slots: Optional[tuple[str, ...]] = None
    joined_conditions: Optional[str] = None
    species: Optional[list[str]] = None
    corpus: str = ""

    @property
    def reactant_smiles(self) -> list[str]:
        return [m.smiles for m in self.reactants]

    @property
    def product_smiles(self) -> list[str]:
        return [m.smiles for m in self.products]

    @property
    def answer(self) -> str:
        if self.joined_conditions is not None:
            return self.joined_conditions
        return ".".join(x for x in (self.slots or ()) if x != NONE_LABEL)


def parse_reaction(raw: str, **fields) -> ReactionRecord:
    reactants, products = split_reaction(raw)
    return ReactionRecord(raw=raw.strip(),
                          reactants=[parse_molecule(r) for r in reactants],
                          products=[parse_molecule(p) for p in products],
                          **fields)
