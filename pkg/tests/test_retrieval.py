import numpy as np
import pytest

from rxncond.dataset import attach_retrieved_corpus
from rxncond.retrieval import CorpusEntry, CorpusIndex, cosine, fingerprint, retrieve_similar
from rxncond.smiles import parse_reaction
from rxncond.synthetic import random_reactions


def test_identical_fingerprints():
    a = fingerprint("CCO.CC(=O)O>>CCOC(C)=O")
    assert np.array_equal(a, fingerprint("CCO.CC(=O)O>>CCOC(C)=O"))
    assert a.shape == (2048,)


def test_disjoint_tokens_near_zero():
    a = fingerprint("CCCC>>CCCCC")
    b = fingerprint("[Na+].[Cl-]>>[Na+]")
    assert cosine(a, b) < 0.05


def test_collision_rate_disjoint_pairs():
    rng = np.random.default_rng(0)
    chain = lambda alphabet: "".join(rng.choice(alphabet, size=int(rng.integers(3, 12))))
    worst = 0.0
    for _ in range(300):
        a = f"{chain(['C', 'O'])}.{chain(['C', 'O'])}>>{chain(['C', 'O'])}"
        b = f"{chain(['N', 'S', 'P'])}>>{chain(['N', 'S', 'P'])}"
        worst = max(worst, cosine(fingerprint(a), fingerprint(b)))
    assert worst < 0.05


def test_empty_similarity():
    assert cosine(np.zeros(8), np.ones(8)) == 0.0


def pool(n=50, seed=0):
    rxns = random_reactions(n, seed)
    return CorpusIndex([CorpusEntry(r, f"paragraph {i}") for i, r in enumerate(rxns)]), rxns


def test_identical_reaction_ranks_first():
    idx, rxns = pool()
    hits = idx.retrieve(rxns[17], 3)
    assert hits[0] == ("paragraph 17", pytest.approx(1.0))


def test_k_zero_and_oversized():
    idx, rxns = pool(10)
    assert idx.retrieve(rxns[0], 0) == []
    assert len(idx.retrieve(rxns[0], 100)) == 10


def test_brute_force_ranking():
    idx, _ = pool(50)
    for q in random_reactions(20, 123):
        fq = fingerprint(q)
        scores = [cosine(fq, fingerprint(e.reaction_smiles)) for e in idx.entries]
        order = sorted(range(50), key=lambda i: (-round(scores[i], 12), i))
        got = idx.retrieve(q, 50)
        assert [c for c, _ in got] == [f"paragraph {i}" for i in order]
        for (_, s), i in zip(got, order):
            assert s == pytest.approx(scores[i], abs=1e-12)
            assert 0.0 <= s <= 1.0


def test_self_exclusion():
    idx, rxns = pool(20)
    rec = parse_reaction(rxns[4], corpus="paragraph 4")
    hits = retrieve_similar(rec, idx, 20)
    assert len(hits) == 19 and all(c != "paragraph 4" for c, _ in hits)
    assert idx.retrieve(rxns[4], 1, exclude_corpus="paragraph 4")[0][0] != "paragraph 4"


def test_attach_never_uses_own_corpus():
    idx, rxns = pool(20)
    recs = [parse_reaction(r, id=str(i), corpus=f"paragraph {i}") for i, r in enumerate(rxns)]
    out = attach_retrieved_corpus(recs, idx)
    assert all(o.corpus != r.corpus for o, r in zip(out, recs))


def test_empty_pool_and_jsonl(tmp_path):
    with pytest.raises(ValueError):
        CorpusIndex([])
    path = tmp_path / "pool.jsonl"
    path.write_text('{"reaction_smiles": "CCO>>CC=O", "corpus": "oxidation"}\n\n', encoding="utf-8")
    idx = CorpusIndex.from_jsonl(path)
    assert len(idx) == 1 and idx.retrieve("CCO>>CC=O")[0][0] == "oxidation"
