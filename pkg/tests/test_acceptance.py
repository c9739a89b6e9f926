"""Acceptance criteria, one test each.  Every test prints a single
``PASS``/``FAIL`` line with the measured value next to its threshold."""
import json
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from rxncond import cli
from rxncond.autograd import tensor as T
from rxncond.autograd.tensor import Tensor
from rxncond.dataset import power_law_fit, sample_power_law, split_811
from rxncond.decoder import (ContextTokens, TinyDecoder, beam_search, classification_loss, enumerate_sequences,
                             generation_loss)
from rxncond.gradsuite import TOL, run_suite
from rxncond.graph import GraphEncoder
from rxncond.metrics import partial_match, topk_sequence, topk_strict
from rxncond.projector import ModalityProjector
from rxncond.smiles import SLOT_NAMES, Bond, Molecule, load_grouping, parse_molecule, split_condition_string
from rxncond.synthetic import condition_rows, random_molecule, write_csv, write_fixture_dataset
from rxncond.trainer import (TrainConfig, encode_split, evaluate, greedy_exact, load_checkpoint, load_split,
                             train)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}", flush=True)
        assert ok, f"{name}: {detail}"
    return emit


@pytest.mark.slow
def test_gradient_suite(report):
    t0 = time.perf_counter()
    entries = run_suite(configs=20, model_configs=20, seed=0)
    secs = time.perf_counter() - t0
    worst = max(entries, key=lambda e: e.max_rel_err)
    failed = [e.name for e in entries if not e.ok]
    ok = not failed and secs < 120 and min(e.configs for e in entries) >= 20
    report("gradient suite", ok, f"{len(entries)} checks, worst {worst.name} rel err {worst.max_rel_err:.2e} "
                                 f"(< {TOL:g}), {secs:.1f}s (< 120s), failed {failed}")


@pytest.mark.slow
def test_overfit_classification(tmp_path, report):
    data = write_fixture_dataset("classify", tmp_path / "data", 128, seed=0)
    cfg = TrainConfig(data=str(data), out=str(tmp_path / "run"), task="classify", epochs=300, max_lr=3e-3,
                      warmup_fraction=0.05, early_stop=0.95, eval_every=2)
    t0 = time.perf_counter()
    res = train(cfg)
    secs = time.perf_counter() - t0
    top1 = evaluate(res.checkpoint, data, split="train", ks=(1,))["topk"]
    worst = min(top1[s][1] for s in SLOT_NAMES)
    ok = worst >= 0.95 and res.epochs_run <= 300 and secs < 300
    report("overfit classification", ok, f"min slot top-1 {worst:.3f} (>= 0.95) after {res.epochs_run} epochs "
                                         f"(<= 300), {secs:.0f}s (< 300s)")


@pytest.mark.slow
def test_overfit_generation(tmp_path, report):
    data = write_fixture_dataset("generate", tmp_path / "data", 64, seed=0)
    cfg = TrainConfig(data=str(data), out=str(tmp_path / "run"), task="generate", epochs=500, max_lr=3e-3,
                      warmup_fraction=0.05, early_stop=0.9, eval_every=5)
    t0 = time.perf_counter()
    res = train(cfg)
    secs = time.perf_counter() - t0
    loaded = load_checkpoint(res.checkpoint)
    exact = greedy_exact(loaded.model, encode_split(load_split(data, "train"), loaded.vocabs, loaded.model_cfg))
    ok = exact >= 0.9 and res.epochs_run <= 500 and secs < 300
    report("overfit generation", ok, f"greedy exact match {exact:.3f} (>= 0.90) after {res.epochs_run} epochs "
                                     f"(<= 500), {secs:.0f}s (< 300s)")


def _brute_strict(preds, truth, ks):
    return {s: {k: sum(t[s] in p[s][:k] for p, t in zip(preds, truth)) / len(truth) for k in ks}
            for s in SLOT_NAMES}


def _brute_sequence(cands, truth, ks, g):
    ms = lambda x: Counter(split_condition_string(x, g))
    return {k: sum(any(ms(c) == ms(t) for c in cs[:k]) for cs, t in zip(cands, truth)) / len(truth) for k in ks}


def _toy_model(seed, vocab):
    cache = {}

    def step(prefixes):
        rows = []
        for p in prefixes:
            key = tuple(p)
            if key not in cache:
                z = np.random.default_rng([seed, *key]).normal(scale=2.0, size=vocab)
                cache[key] = z - np.logaddexp.reduce(z)
            rows.append(cache[key])
        return np.stack(rows)
    return step


def test_metric_and_beam_oracles(report):
    rng = np.random.default_rng(0)
    g = load_grouping()
    labels = [f"L{i}" for i in range(12)]
    species = ["CO", "O", "ClCCl", "[Na+]", "[OH-]", "CC(=O)O", "[Pd]"]
    ks = (1, 3, 5, 10)
    strict_bad = seq_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        preds = [{s: list(rng.permutation(labels)[:10]) for s in SLOT_NAMES} for _ in range(n)]
        truth = [{s: labels[int(rng.integers(12))] for s in SLOT_NAMES} for _ in range(n)]
        strict_bad += topk_strict(preds, truth, ks) != _brute_strict(preds, truth, ks)
        cond = lambda: ".".join(rng.choice(species, size=int(rng.integers(1, 4))))
        truth_s = [cond() for _ in range(n)]
        cands = [[cond() for _ in range(int(rng.integers(0, 11)))] for _ in range(n)]
        seq_bad += topk_sequence(cands, truth_s, ks, g) != _brute_sequence(cands, truth_s, ks, g)
    beam_bad = 0
    for m in range(100):
        vocab, max_len = int(rng.integers(3, 6)), int(rng.integers(1, 5))
        model = _toy_model(m, vocab)
        exact = enumerate_sequences(model, vocab, max_len)
        beams = beam_search(model, vocab ** max_len, max_len)
        k = min(10, len(exact))
        same = [r.tokens for r in beams[:k]] == [r.tokens for r in exact[:k]] and \
            np.allclose([r.score for r in beams[:k]], [r.score for r in exact[:k]], rtol=1e-12, atol=0)
        beam_bad += not same
    report("metric and beam oracles", strict_bad == seq_bad == beam_bad == 0,
           f"strict mismatches {strict_bad}/1000, sequence mismatches {seq_bad}/1000, beam mismatches {beam_bad}/100")


def test_partial_match_fixture(report):
    cases = json.loads((FIXTURES / "partial_match.json").read_text(encoding="utf-8"))
    g = load_grouping()
    wrong = [c["note"] for c in cases if partial_match(c["pred"], c["truth"], g, c["role"], c["lenient"]) != c["label"]]
    has_ion_pair = any("[Na+].[OH-]" in (c["pred"], c["truth"]) for c in cases)
    report("partial-match fixture", len(cases) == 20 and has_ion_pair and not wrong,
           f"{len(cases)} cases, ion-pair case present {has_ion_pair}, discrepancies {len(wrong)} {wrong}")


def test_rgcn_permutation_invariance(report):
    rng = np.random.default_rng(0)
    with T.precision("f32"):  # the training precision, the harder case
        enc = GraphEncoder(rng, hidden=32, out_width=16)
        worst = 0.0
        for _ in range(100):
            mol = parse_molecule(random_molecule(rng, 2, 4))
            perm = rng.permutation(len(mol))
            atoms = [None] * len(mol.atoms)
            for k, a in enumerate(mol.atoms):
                atoms[perm[k]] = a
            shuffled = Molecule(atoms, [Bond(int(perm[b.i]), int(perm[b.j]), b.order) for b in mol.bonds], mol.smiles)
            a, b = enc.molecule_embed(mol).data, enc.molecule_embed(shuffled).data
            worst = max(worst, float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-12)))
    report("R-GCN permutation invariance", worst <= 1e-6, f"max relative deviation {worst:.2e} (<= 1e-6) "
                                                          f"over 100 permutations")


def test_projector_contract(report):
    rng = np.random.default_rng(0)
    c_in, c_llm, vocab = 16, 12, 20
    proj = ModalityProjector(rng, c_in, c_in, c_llm, seq_rows=128, vocab_size=vocab)
    tbl = Tensor(rng.normal(size=(vocab, c_llm)))
    counts = {}
    for n in (4, 64, 128, 512):
        s = proj.project_smiles(Tensor(rng.normal(size=(2, n, c_in))), tbl).shape
        counts[n] = s[1]
    g_in = Tensor(rng.normal(size=(2, c_in)))
    g = proj.project_graph(g_in, tbl)
    s_params = dict(proj.smiles.named_parameters())
    g_params = dict(proj.graph.named_parameters())
    shared = sum(np.shares_memory(a.data, b.data) for a in s_params.values() for b in g_params.values())
    before = g.data.copy()
    for p in s_params.values():
        p.data += 1.0
    untouched = np.array_equal(proj.project_graph(g_in, tbl).data, before)
    ok = set(counts.values()) == {128} and g.shape[1] == 3 and shared == 0 and untouched
    report("projector contract", ok, f"SMILES tokens {counts} (128), graph tokens {g.shape[1]} (3), "
                                     f"shared buffers {shared} (0), graph path unchanged by SMILES mutation {untouched}")


def test_split_sizes(report):
    tr, va, te = split_811(range(683_410), seed=0)
    sizes = (len(tr), len(va), len(te))
    report("split_811 sizes", sizes == (546_728, 68_341, 68_341), f"{sizes} (546728, 68341, 68341)")


def test_real_sparsity_counts(report, capsys):
    # the USPTO-Condition release is not bundled; the conditional half of the criterion is skipped
    with capsys.disabled():
        print("\nSKIPPED  sparsity on real USPTO-Condition data: dataset not available", flush=True)
    pytest.skip("real USPTO-Condition data not available")


@pytest.mark.parametrize("alpha", [2.0, 2.5])
def test_power_law_alpha(alpha, report):
    fit = power_law_fit(sample_power_law(alpha, 10_000, seed=0))
    report(f"power-law fit alpha={alpha}", abs(fit.alpha - alpha) <= 0.1,
           f"estimate {fit.alpha:.4f} (within 0.1)")


def test_uniform_logit_losses(report):
    with T.precision("f64"):
        sizes = (8, 6, 6, 10, 10)
        dec = TinyDecoder(np.random.default_rng(0), 30, width=8, heads=2, layers=1, max_context=8, max_target=8,
                          slot_sizes=sizes)
        for head in dec.cls_heads.values():
            head.weight.data[...] = 0.0
            head.bias.data[...] = 0.0
        ctx = ContextTokens(Tensor(np.random.default_rng(1).normal(size=(3, 5, 8))), np.ones((3, 5), dtype=bool))
        cls = classification_loss(dec.slot_logits(dec.encode_context(ctx)), np.zeros((3, 5), dtype=int)).item()
        cls_err = abs(cls - sum(math.log(v) for v in sizes))
        V = 30
        one = generation_loss(Tensor(np.zeros((2, 1, V))), np.full((2, 1), 7)).item()
        # the sequence loss sums over target positions, so L uniform steps cost L ln V
        four = generation_loss(Tensor(np.zeros((2, 4, V))), np.full((2, 4), 7)).item()
        gen_err = max(abs(one - math.log(V)), abs(four - 4 * math.log(V)))
    report("uniform-logit losses", cls_err <= 1e-6 and gen_err <= 1e-6,
           f"|cls - sum ln V_i| {cls_err:.1e}, |gen - L ln V| {gen_err:.1e} (<= 1e-6)")


def test_end_to_end_determinism(tmp_path, report):
    csv_path = write_csv(condition_rows(60, 0), tmp_path / "c.csv")
    reports = []
    for run in ("a", "b"):
        data, out = tmp_path / run / "data", tmp_path / run / "run"
        assert cli.main(["build-data", "--input", str(csv_path), "--flavor", "condition",
                         "--output", str(data), "--seed", "0"]) == 0
        conf = tmp_path / run / "train.json"
        conf.write_text(json.dumps({"task": "classify", "epochs": 10, "seed": 0, "max_lr": 1e-3,
                                    "data": str(data), "out": str(out)}))
        assert cli.main(["train", "--config", str(conf)]) == 0
        assert cli.main(["evaluate", "--checkpoint", str(out), "--out", str(tmp_path / run / "report")]) == 0
        reports.append([(tmp_path / run / "report" / f"test_report.{ext}").read_bytes() for ext in ("json", "csv")])
    same = reports[0] == reports[1]
    report("end-to-end determinism", same, f"two seeded build-data/train(10 epochs)/evaluate runs, "
                                           f"reports bit-identical {same}")
