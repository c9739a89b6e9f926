"""Training, evaluation and candidate ranking on top of the multimodal model.

A dataset directory (written by ``build-data``) holds ``train/valid/test.jsonl``
instruction examples plus ``vocab.json``.  A checkpoint is a directory holding
``params.ntf`` (NTF1) and ``meta.json`` (configs, vocabularies, vocab hash).
"""
from __future__ import annotations

import json
import logging
import math
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import yaml

from .autograd import checkpoint as ckpt
from .autograd import tensor as T
from .autograd.optim import Adam, OneCycleSchedule, ParamStore
from .decoder import topk_indices
from .metrics import DEFAULT_KS, emit_report, overall_top1, partial_match, topk_sequence, topk_strict
from .model import MMRCR, BACKBONE_FROZEN, EncodedExample, ModelConfig, encode_example
from .prompts import InstructionExample, load_templates, read_jsonl, render_prompt
from .smiles import NONE_LABEL, SLOT_NAMES, load_grouping, parse_reaction
from .vocab import EOS, CondVocab, TokenVocab, smiles_tokens, vocab_hash

log = logging.getLogger(__name__)

TASKS = ("classify", "generate")
SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class VocabMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    """Declarative training configuration; every key may appear in the config file."""
    data: str = ""
    out: str = "runs/default"
    task: str = "classify"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 16
    max_lr: float = 3e-5
    warmup_fraction: float = 0.3
    final_lr_fraction: float = 1e-2
    freeze: list = field(default_factory=list)
    precision: str = "f32"
    shuffle: bool = True
    # stop once training-set accuracy (slot top-1 minimum, or greedy exact match) reaches this
    early_stop: Optional[float] = None
    eval_every: int = 1
    keep_checkpoints: int = 2
    model: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.data:
            raise ConfigError("config needs a 'data' directory")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not (self.max_lr > 0 and math.isfinite(self.max_lr)):
            raise ConfigError("max_lr must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in (0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        if self.early_stop is not None and not 0.0 < self.early_stop <= 1.0:
            raise ConfigError("early_stop must be in (0, 1]")
        if self.keep_checkpoints < 1 or self.eval_every < 1:
            raise ConfigError("keep_checkpoints and eval_every must be >= 1")
        ModelConfig.from_json(self.model)
        unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")

    @property
    def freeze_prefixes(self) -> list[str]:
        out = []
        for p in self.freeze:
            out.extend(BACKBONE_FROZEN if p == "backbone" else [p])
        return out

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def load_config(path: Optional[str | Path], **overrides) -> TrainConfig:
    """Read a YAML/JSON config file and apply non-None overrides (flags win)."""
    d: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    d.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(d)
    cfg.validate()
    return cfg


# -- datasets -------------------------------------------------------------------
@dataclass
class Vocabs:
    tokens: TokenVocab
    conds: CondVocab

    @property
    def hash(self) -> str:
        return vocab_hash(self.tokens, self.conds)

    def to_json(self) -> dict:
        return {"tokens": self.tokens.to_json(), "conds": self.conds.to_json(), "hash": self.hash}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabs":
        v = cls(TokenVocab.from_json(d["tokens"]), CondVocab.from_json(d["conds"]))
        if "hash" in d and d["hash"] != v.hash:
            raise VocabMismatch("stored vocab hash does not match its contents")
        return v


def load_vocabs(data_dir: str | Path) -> Vocabs:
    return Vocabs.from_json(json.loads((Path(data_dir) / "vocab.json").read_text(encoding="utf-8")))


def load_split(data_dir: str | Path, split: str) -> list[InstructionExample]:
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(path)
    return read_jsonl(path)


def encode_split(examples: Sequence[InstructionExample], vocabs: Vocabs, cfg: ModelConfig) -> list[EncodedExample]:
    return [encode_example(e, vocabs.tokens, vocabs.conds, cfg) for e in examples]


def batches(n: int, size: int, rng: Optional[np.random.Generator]) -> list[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + size] for i in range(0, n, size)]


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(path: str | Path, model: MMRCR, meta: dict) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ckpt.save(path / "params.ntf", {k: p.data for k, p in model.named_parameters()})
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def resolve_checkpoint(path: str | Path) -> Path:
    """Accept a checkpoint dir or a run dir (uses the ``latest`` pointer)."""
    path = Path(path)
    if (path / "params.ntf").exists():
        return path
    pointer = path / "latest"
    if pointer.exists():
        return path / pointer.read_text(encoding="utf-8").strip()
    raise FileNotFoundError(f"{path}: no params.ntf or latest pointer")


@dataclass
class Loaded:
    model: MMRCR
    vocabs: Vocabs
    meta: dict

    @property
    def task(self) -> str:
        return self.meta["task"]

    @property
    def model_cfg(self) -> ModelConfig:
        return self.model.cfg


def build_model(cfg: ModelConfig, vocabs: Vocabs, seed: int) -> MMRCR:
    model = MMRCR(np.random.default_rng(seed), cfg, len(vocabs.tokens), vocabs.conds.sizes())
    model.set_vocab(vocabs.tokens)
    return model


def load_checkpoint(path: str | Path) -> Loaded:
    path = resolve_checkpoint(path)
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    vocabs = Vocabs.from_json(meta["vocab"])
    T.set_precision(meta.get("precision", "f32"))
    model = build_model(ModelConfig.from_json(meta["model"]), vocabs, seed=0)
    arrays = ckpt.load(path / "params.ntf")
    params = dict(model.named_parameters())
    if set(arrays) != set(params):
        missing, extra = set(params) - set(arrays), set(arrays) - set(params)
        raise ckpt.CheckpointError(f"parameter mismatch: missing {sorted(missing)[:5]}, extra {sorted(extra)[:5]}")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ckpt.CheckpointError(f"{name}: shape {arrays[name].shape} != {p.data.shape}")
        p.data = arrays[name]
    return Loaded(model, vocabs, meta)


# -- accuracy helpers -----------------------------------------------------------
def slot_accuracy(model: MMRCR, enc: Sequence[EncodedExample], batch_size: int = 16) -> list[float]:
    if not enc:
        return [0.0] * len(SLOT_NAMES)
    hits = np.zeros(len(SLOT_NAMES))
    for idx in batches(len(enc), batch_size, None):
        b = [enc[i] for i in idx]
        logits = model.slot_logits(b)
        labels = np.stack([e.slot_labels for e in b])
        for s, lg in enumerate(logits):
            hits[s] += np.sum(np.argmax(lg, axis=-1) == labels[:, s])
    return list(hits / len(enc))


def greedy_exact(model: MMRCR, enc: Sequence[EncodedExample], batch_size: int = 16) -> float:
    if not enc:
        return 0.0
    max_len = max(len(e.target_ids) for e in enc) + 1
    hits = 0
    for idx in batches(len(enc), batch_size, None):
        b = [enc[i] for i in idx]
        for e, out in zip(b, model.greedy(b, max_len=max_len)):
            hits += int(out + [EOS] == list(e.target_ids))
    return hits / len(enc)


def train_accuracy(model: MMRCR, enc: Sequence[EncodedExample], task: str, batch_size: int = 16) -> float:
    if task == "classify":
        return min(slot_accuracy(model, enc, batch_size))
    return greedy_exact(model, enc, batch_size)


# -- training -------------------------------------------------------------------
@dataclass
class TrainResult:
    checkpoint: Path
    epochs_run: int
    steps: int
    final_loss: float
    train_accuracy: Optional[float]
    seconds: float
    history: list = field(default_factory=list)
    model: Optional[MMRCR] = field(default=None, repr=False)


def _check_task_data(enc: Sequence[EncodedExample], task: str) -> None:
    if not enc:
        raise ConfigError("training split is empty")
    if task == "classify" and any(e.slot_labels is None for e in enc):
        raise ConfigError("classification needs slot-flavor data (build-data --flavor condition)")
    if task == "generate" and any(not e.target_ids for e in enc):
        raise ConfigError("generation needs examples with answers")
    if task == "classify" and any((e.slot_labels < 0).any() for e in enc):
        raise ConfigError("training labels outside the slot vocabulary")


def train(cfg: TrainConfig) -> TrainResult:
    cfg.validate()
    T.set_precision(cfg.precision)
    vocabs = load_vocabs(cfg.data)
    mcfg = ModelConfig.from_json(cfg.model)
    enc = encode_split(load_split(cfg.data, "train"), vocabs, mcfg)
    _check_task_data(enc, cfg.task)

    model = build_model(mcfg, vocabs, cfg.seed)
    store = ParamStore(model.named_parameters(), frozen=cfg.freeze_prefixes)
    n_batches = math.ceil(len(enc) / cfg.batch_size)
    schedule = OneCycleSchedule(cfg.epochs * n_batches, max_lr=cfg.max_lr,
                                warmup_fraction=cfg.warmup_fraction, final_lr_fraction=cfg.final_lr_fraction)
    opt = Adam(store, schedule)
    rng = np.random.default_rng(cfg.seed)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta_base = {"task": cfg.task, "precision": cfg.precision, "model": mcfg.to_json(),
                 "train": cfg.to_json(), "vocab": vocabs.to_json(), "vocab_hash": vocabs.hash}
    log_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")
    t0 = time.perf_counter()
    step = 0
    loss_val = float("nan")
    acc: Optional[float] = None
    history = []
    saved: list[Path] = []
    try:
        for epoch in range(cfg.epochs):
            epoch_loss = 0.0
            for idx in batches(len(enc), cfg.batch_size, rng if cfg.shuffle else None):
                batch = [enc[i] for i in idx]
                store.zero_grad()
                loss = model.loss(batch, cfg.task)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingError(f"non-finite loss {loss_val} at epoch {epoch} step {step} "
                                        f"(lr {schedule.lr(step):.3g}, batch ids {[e.record.id for e in batch][:4]})")
                loss.backward()
                lr = opt.step(step)
                log_fh.write(json.dumps({"epoch": epoch, "step": step, "loss": loss_val, "lr": lr,
                                         "batch": len(batch)}) + "\n")
                epoch_loss += loss_val * len(batch)
                step += 1
            log_fh.flush()
            record = {"epoch": epoch, "loss": epoch_loss / len(enc)}
            stop = False
            if cfg.early_stop is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
                acc = train_accuracy(model, enc, cfg.task, cfg.batch_size)
                record["train_accuracy"] = acc
                stop = acc >= cfg.early_stop
            history.append(record)
            log.info("epoch %d loss %.4f%s", epoch, record["loss"],
                     f" acc {acc:.3f}" if "train_accuracy" in record else "")
            name = f"epoch_{epoch:04d}"
            saved.append(save_checkpoint(out / name, model, {**meta_base, "epoch": epoch, "step": step}))
            (out / "latest").write_text(name + "\n", encoding="utf-8")
            while len(saved) > cfg.keep_checkpoints:
                shutil.rmtree(saved.pop(0), ignore_errors=True)
            if stop:
                break
    finally:
        log_fh.close()
    (out / "history.json").write_text(json.dumps(history, indent=1) + "\n", encoding="utf-8")
    return TrainResult(saved[-1], len(history), step, loss_val, acc, time.perf_counter() - t0, history, model)


# -- evaluation -----------------------------------------------------------------
def _ranked_labels(logits: np.ndarray, conds: CondVocab, slot: str, k: int) -> list[str]:
    idx = topk_indices(logits, min(k, logits.shape[-1]))
    ranked = [conds.decode(slot, int(i)) for i in idx]
    # pad short vocabularies with entries that never match a label
    return ranked + [""] * (k - len(ranked))


def beam_candidates(model: MMRCR, example: EncodedExample, tokens: TokenVocab, k: int,
                    beam_width: int = 10, max_len: Optional[int] = None) -> tuple[list[tuple[str, float]], bool]:
    """Top-k unique detokenized candidates with scores; the flag is True when
    fewer than k distinct candidates reached EOS."""
    if beam_width < k:
        raise ValueError(f"beam_width {beam_width} < k {k}")
    out: list[tuple[str, float]] = []
    seen: set[str] = set()
    for r in model.beam(example, beam_width, max_len):
        s = tokens.decode_condition(r.tokens)
        if s in seen:
            continue
        seen.add(s)
        out.append((s, r.score))
        if len(out) == k:
            break
    short = len(out) < k
    if short:
        log.warning("beam search produced %d of %d candidates for %s", len(out), k, example.record.id)
    return out, short


def evaluate(checkpoint: str | Path, data_dir: str | Path, split: str = "test",
             ks: Sequence[int] = DEFAULT_KS, out_dir: Optional[str | Path] = None,
             model_name: Optional[str] = None, beam_width: int = 10, batch_size: int = 16,
             grouping=None) -> dict:
    """Deterministic full-split evaluation; writes ``<split>_report.{json,csv}``."""
    return evaluate_loaded(load_checkpoint(checkpoint), data_dir, split, ks, out_dir, model_name,
                           beam_width, batch_size, grouping)


def evaluate_loaded(loaded: Loaded, data_dir: str | Path, split: str = "test",
                    ks: Sequence[int] = DEFAULT_KS, out_dir: Optional[str | Path] = None,
                    model_name: Optional[str] = None, beam_width: int = 10, batch_size: int = 16,
                    grouping=None) -> dict:
    """Same as :func:`evaluate` for a model already in memory."""
    data_vocabs = load_vocabs(data_dir)
    if data_vocabs.hash != loaded.meta["vocab_hash"]:
        raise VocabMismatch(f"dataset vocab hash {data_vocabs.hash} != checkpoint {loaded.meta['vocab_hash']}")
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive integers")
    kmax = ks[-1]
    model, vocabs = loaded.model, loaded.vocabs
    examples = load_split(data_dir, split)
    enc = encode_split(examples, vocabs, loaded.model_cfg)
    grouping = load_grouping() if grouping is None else grouping
    result: dict[str, Any] = {"model": model_name or f"rxncond-{loaded.task}", "task": loaded.task,
                              "split": split, "n": len(enc), "vocab_hash": vocabs.hash}
    if loaded.task == "classify":
        preds, truth = [], []
        for idx in batches(len(enc), batch_size, None):
            b = [enc[i] for i in idx]
            logits = model.slot_logits(b)
            for j, e in enumerate(b):
                preds.append({s: _ranked_labels(logits[si][j], vocabs.conds, s, kmax)
                              for si, s in enumerate(SLOT_NAMES)})
                truth.append({s: (e.source.slots or {}).get(s, NONE_LABEL) for s in SLOT_NAMES})
        result["topk"] = topk_strict(preds, truth, ks) if enc else {s: {k: 0.0 for k in ks} for s in SLOT_NAMES}
        result["overall_top1"] = overall_top1(result["topk"])
        result["overall_top1_definition"] = "local: mean of the five slot top-1 accuracies"
    else:
        cands, truth, partial, short = [], [], 0, 0
        width = max(beam_width, kmax)
        for e in enc:
            c, flag = beam_candidates(model, e, vocabs.tokens, kmax, width)
            short += int(flag)
            cands.append([s for s, _ in c])
            truth.append(e.source.answer if e.source.answer != NONE_LABEL else "")
            if c:
                partial += partial_match(c[0][0], truth[-1], grouping)
        result["topk"] = {"conditions": topk_sequence(cands, truth, ks, grouping)} if enc else \
            {"conditions": {k: 0.0 for k in ks}}
        result["partial_top1"] = partial / len(enc) if enc else 0.0
        result["short_beams"] = short
    if out_dir is not None:
        emit_report([result], out_dir, stem=f"{split}_report")
    return result


# -- candidate ranking ----------------------------------------------------------
def _query_example(reaction: str, corpus: str = "", template_index: int = 0) -> InstructionExample:
    rec = parse_reaction(reaction, id="query", corpus=corpus)
    return render_prompt(rec, load_templates()[template_index], 0)


def recommend(checkpoint: str | Path, reaction: str, role: str = "catalyst",
              candidates: Optional[Sequence[str]] = None, k: int = 10, corpus: str = "",
              beam_width: int = 10) -> list[tuple[str, float]]:
    """Ranked (condition, score) pairs.

    Without candidates the head's own top-k is returned.  With candidates only
    those are ranked: by restricted softmax for slot classification, by
    sequence log-probability for generation.  Ties keep the candidate order.
    """
    loaded = load_checkpoint(checkpoint)
    model, vocabs = loaded.model, loaded.vocabs
    ex = encode_example(_query_example(reaction, corpus), vocabs.tokens, None, loaded.model_cfg)
    if loaded.task == "classify":
        if role not in SLOT_NAMES:
            raise ValueError(f"role must be one of {SLOT_NAMES} for a classification checkpoint")
        s = SLOT_NAMES.index(role)
        logits = model.slot_logits([ex])[s][0].astype(np.float64)
        if candidates is None:
            logp = logits - np.logaddexp.reduce(logits)
            idx = topk_indices(logits, min(k, len(logits)))
            return [(vocabs.conds.decode(role, int(i)), float(logp[i])) for i in idx]
        ids = []
        for c in candidates:
            i = vocabs.conds.encode(role, c)
            if i < 0:
                raise KeyError(f"candidate {c!r} is not in the {role} vocabulary")
            ids.append(i)
        sub = logits[ids]
        logp = sub - np.logaddexp.reduce(sub)
        order = np.argsort(-logp, kind="stable")
        return [(candidates[i], float(logp[i])) for i in order]
    if candidates is None:
        return beam_candidates(model, ex, vocabs.tokens, k, max(beam_width, k))[0]
    scores = []
    for c in candidates:
        target = vocabs.tokens.encode_condition(c if c != NONE_LABEL else "")
        scores.append(model.sequence_logprob(ex, target))
    order = np.argsort(-np.asarray(scores), kind="stable")
    return [(candidates[i], float(scores[i])) for i in order]


def read_candidates(path: str | Path) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    out = [ln for ln in lines if ln and not ln.startswith("#")]
    if not out:
        raise ValueError(f"{path}: no candidates")
    return out
