import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rxncond.metrics import (CSV_FIELDS, MetricError, emit_report, overall_top1, partial_match, read_report_csv,
                             topk_sequence, topk_strict)
from rxncond.smiles import SLOT_NAMES, load_grouping

FIXTURES = Path(__file__).parent / "fixtures"
LABELS = [f"L{i}" for i in range(12)]
SPECIES = ["CO", "O", "ClCCl", "[Na+]", "[OH-]", "CC(=O)O", "[Pd]"]


def random_strict_case(rng):
    n = int(rng.integers(1, 8))
    preds, truth = [], []
    for _ in range(n):
        preds.append({s: list(rng.permutation(LABELS)[:10]) for s in SLOT_NAMES})
        truth.append({s: LABELS[int(rng.integers(len(LABELS)))] for s in SLOT_NAMES})
    return preds, truth


def brute_strict(preds, truth, ks):
    out = {}
    for s in SLOT_NAMES:
        out[s] = {}
        for k in ks:
            hits = 0
            for p, t in zip(preds, truth):
                hit = False
                for j in range(k):
                    if p[s][j] == t[s]:
                        hit = True
                hits += hit
            out[s][k] = hits / len(truth)
    return out


def test_strict_oracle_1000_cases():
    rng = np.random.default_rng(0)
    ks = (1, 3, 5, 10)
    for _ in range(1000):
        preds, truth = random_strict_case(rng)
        assert topk_strict(preds, truth, ks) == brute_strict(preds, truth, ks)


def test_strict_ranks():
    p = [{s: ["a", "b", "c", "d", "e"] for s in SLOT_NAMES}]
    at1 = topk_strict(p, [{s: "a" for s in SLOT_NAMES}], (1, 3, 5))
    assert at1["catalyst"] == {1: 1.0, 3: 1.0, 5: 1.0}
    at2 = topk_strict(p, [{s: "b" for s in SLOT_NAMES}], (1, 3))
    assert at2["solvent1"] == {1: 0.0, 3: 1.0}


def test_strict_errors():
    p = [{s: ["a"] * 3 for s in SLOT_NAMES}]
    with pytest.raises(MetricError, match="missing slot"):
        topk_strict(p, [{"catalyst": "a"}], (1,))
    with pytest.raises(MetricError, match="shorter"):
        topk_strict(p, [{s: "a" for s in SLOT_NAMES}], (1, 5))


def multiset(s, g):
    from rxncond.smiles import split_condition_string
    return Counter(split_condition_string(s, g))


def brute_sequence(cands, truth, ks, g):
    out = {}
    for k in ks:
        hits = 0
        for c, t in zip(cands, truth):
            hits += any(multiset(x, g) == multiset(t, g) for x in c[:k])
        out[k] = hits / len(truth)
    return out


def random_condition(rng):
    k = int(rng.integers(1, 4))
    return ".".join(rng.choice(SPECIES, size=k))


def test_sequence_oracle_1000_cases():
    rng = np.random.default_rng(1)
    g = load_grouping()
    ks = (1, 3, 5, 10)
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        truth = [random_condition(rng) for _ in range(n)]
        cands = [[random_condition(rng) for _ in range(int(rng.integers(0, 11)))] for _ in range(n)]
        assert topk_sequence(cands, truth, ks, g) == brute_sequence(cands, truth, ks, g)


def test_sequence_order_free_and_missing():
    assert topk_sequence([["CC(=O)O.CO"]], ["CO.CC(=O)O"], (1,)) == {1: 1.0}
    assert topk_sequence([["CO"]], ["CO.CC(=O)O"], (1,)) == {1: 0.0}
    assert topk_sequence([["CO.CO"]], ["CO"], (1,)) == {1: 0.0}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_in_k_and_order_free(seed):
    rng = np.random.default_rng(seed)
    preds, truth = random_strict_case(rng)
    ks = (1, 2, 3, 5, 10)
    res = topk_strict(preds, truth, ks)
    for s in SLOT_NAMES:
        vals = [res[s][k] for k in ks]
        assert vals == sorted(vals)
    perm = rng.permutation(len(truth))
    assert topk_strict([preds[i] for i in perm], [truth[i] for i in perm], ks) == res
    truth_s = [random_condition(rng) for _ in preds]
    cands = [[random_condition(rng) for _ in range(6)] for _ in preds]
    seq = topk_sequence(cands, truth_s, ks)
    assert [seq[k] for k in ks] == sorted(seq[k] for k in ks)
    assert topk_sequence([cands[i] for i in perm], [truth_s[i] for i in perm], ks) == seq


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_strict_hit_implies_partial(seed):
    rng = np.random.default_rng(seed)
    g = load_grouping()
    truth = random_condition(rng)
    cand = truth if rng.random() < 0.5 else random_condition(rng)
    if topk_sequence([[cand]], [truth], (1,), g)[1] == 1.0:
        assert partial_match(cand, truth, g) == 1


# -- partial match ------------------------------------------------------------
def test_partial_match_fixture():
    cases = json.loads((FIXTURES / "partial_match.json").read_text(encoding="utf-8"))
    assert len(cases) == 20
    assert any(c["pred"] == "[Na+].[OH-]" or c["truth"] == "[Na+].[OH-]" for c in cases)
    g = load_grouping()
    wrong = [c["note"] for c in cases
             if partial_match(c["pred"], c["truth"], g, c["role"], c["lenient"]) != c["label"]]
    assert wrong == []


def test_partial_match_rule_examples():
    truth = ["CO", "[Na+]", "CC(=O)O"]
    assert partial_match("CO", truth) == 1
    assert partial_match("CCO", truth) == 0
    with pytest.raises(MetricError):
        partial_match("CO", truth, role="ligand")


def test_overall_top1():
    per = {s: {1: v, 3: 1.0} for s, v in zip(SLOT_NAMES, (0.2, 0.4, 0.6, 0.8, 1.0))}
    assert overall_top1(per) == pytest.approx(0.6)


# -- reports ------------------------------------------------------------------------
RESULT = {"model": "m", "topk": {"catalyst": {1: 0.5, 3: 0.75}, "conditions": {1: 1 / 3, 10: 0.9}}, "n": 12}


def test_report_roundtrip(tmp_path):
    j, c = emit_report([RESULT], tmp_path)
    rows = read_report_csv(c)
    back = json.loads(j.read_text())[0]
    for r in rows:
        assert back["topk"][r["slot"]][str(r["k"])] == r["accuracy"]
    assert len(rows) == 4


def test_report_empty(tmp_path):
    _, c = emit_report([], tmp_path)
    assert c.read_text() == ",".join(CSV_FIELDS) + "\n"


def test_report_golden_schema(tmp_path):
    j, c = emit_report([RESULT], tmp_path, stem="golden")
    assert c.read_text() == (FIXTURES / "report_golden.csv").read_text()
    assert j.read_text() == (FIXTURES / "report_golden.json").read_text()
