import io
import json

import pytest

from rxncond.prompts import (PromptTemplate, TemplateError, build_qa_dataset, load_templates, read_jsonl,
                             render_prompt, write_jsonl)
from rxncond.smiles import parse_reaction
from rxncond.synthetic import fixture_records
from rxncond.vocab import GRAPH_SENTINEL, SMILES_SENTINEL, TokenVocab, text_tokens

RXN = "CC(C)O.O=C(n1ccnc1)n1ccnc1>>CC(C)OC(=O)n1ccnc1"
T0 = PromptTemplate("t", "Predict conditions for <Reaction SMILES> given <Corpus> <SMILES> <Graph>")


def record(corpus="Stirred overnight.", **kw):
    kw.setdefault("joined_conditions", "Cl.ClCCl")
    return parse_reaction(RXN, id="r1", corpus=corpus, **kw)


def test_substitution():
    ex = render_prompt(record(), T0, 0)
    assert RXN in ex.question
    assert ex.question == f"Predict conditions for {RXN} given Stirred overnight. <SMILES> <Graph>"
    assert ex.answer == "Cl.ClCCl"


def test_empty_corpus():
    ex = render_prompt(record(corpus=""), T0, 0)
    assert ex.question == f"Predict conditions for {RXN} given <SMILES> <Graph>"
    assert ex.corpus == ""


def test_deterministic():
    assert render_prompt(record(), T0, 3) == render_prompt(record(), T0, 3)


def test_slot_answer():
    slots = ("[Zn]", "C1CCOC1", "O", "CO", "[Cl-].[NH4+]")
    ex = render_prompt(parse_reaction(RXN, id="r", slots=slots), T0, 0)
    assert ex.slots == dict(zip(("catalyst", "solvent1", "solvent2", "reagent1", "reagent2"), slots))
    assert ex.answer == "[Zn].C1CCOC1.O.CO.[Cl-].[NH4+]"


def test_all_none_answer_not_empty():
    ex = render_prompt(parse_reaction(RXN, id="r", slots=("NONE",) * 5), T0, 0)
    assert ex.answer == "NONE"


@pytest.mark.parametrize("text", ["<Corpus> <Reaction SMILES> <SMILES>",
                                  "<Corpus> <Reaction SMILES> <SMILES> <Graph> <Graph>"])
def test_bad_templates(text):
    with pytest.raises(TemplateError):
        PromptTemplate("bad", text)


def test_bundled_bank():
    bank = load_templates()
    assert len(bank) == 24
    assert len({t.id for t in bank}) == 24


def test_placeholder_conservation():
    recs = fixture_records("classify", 40, seed=1)
    for ex in build_qa_dataset(recs, load_templates(), 5):
        toks = text_tokens(ex.question)
        assert toks.count(SMILES_SENTINEL) == 1 and toks.count(GRAPH_SENTINEL) == 1
        assert ex.answer
        vocab = TokenVocab(toks)
        ids = vocab.encode_text(ex.question)
        assert ids.count(vocab.id(SMILES_SENTINEL)) == 1 and vocab.id(SMILES_SENTINEL) == 5


def test_build_order_and_seed():
    recs = fixture_records("generate", 30, seed=2)
    a = list(build_qa_dataset(recs, load_templates(), 9))
    b = list(build_qa_dataset(recs, load_templates(), 9))
    assert [e.id for e in a] == [r.id for r in recs]
    assert [e.template_id for e in a] == [e.template_id for e in b]
    c = list(build_qa_dataset(recs, load_templates(), 10))
    assert [e.template_id for e in a] != [e.template_id for e in c]


def test_single_template_used_everywhere():
    recs = fixture_records("generate", 10)
    assert {e.template_id for e in build_qa_dataset(recs, [T0], 0)} == {"t"}


def test_expand_and_errors():
    recs = fixture_records("generate", 5)
    out = list(build_qa_dataset(recs, load_templates(), 0, expand=3))
    assert len(out) == 15 and out[1].id == "rxn00000#1"
    with pytest.raises(TemplateError):
        list(build_qa_dataset(recs, [], 0))


def test_one_to_one_count():
    recs = fixture_records("generate", 37)
    assert sum(1 for _ in build_qa_dataset(recs, load_templates(), 0)) == 37


def test_jsonl_roundtrip(tmp_path):
    recs = fixture_records("classify", 6)
    exs = list(build_qa_dataset(recs, load_templates(), 0))
    buf = io.StringIO()
    assert write_jsonl(exs, buf) == 6
    lines = buf.getvalue().split("\n")
    assert lines[-1] == "" and len(lines) == 7
    row = json.loads(lines[0])
    assert set(row) == {"id", "question", "answer", "reaction_smiles", "corpus", "template_id", "slots"}
    assert set(row["slots"]) == {"catalyst", "solvent1", "solvent2", "reagent1", "reagent2"}
    path = tmp_path / "x.jsonl"
    path.write_text(buf.getvalue(), encoding="utf-8")
    back = read_jsonl(path)
    assert [(e.id, e.question, e.answer, e.slots) for e in back] == [(e.id, e.question, e.answer, e.slots) for e in exs]
