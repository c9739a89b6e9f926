"""Finite-difference gradient suite over every differentiable op and the full model.

Runs in 64-bit with central differences (h=1e-5).  Each op is checked on
``configs`` random shapes/inputs; the composed model on ``model_configs``
small random instances with a sample of parameter entries per tensor.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .autograd import nn
from .autograd import tensor as T
from .autograd.gradcheck import check_gradients, directional_check

TOL = 1e-4
H = 1e-5


@dataclass
class SuiteEntry:
    name: str
    configs: int
    max_rel_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOL


def _leaf(rng, shape, lo=None):
    x = rng.normal(size=shape)
    if lo is not None:
        x = np.abs(x) + lo
    return T.Tensor(x, requires_grad=True, dtype=np.float64)


def _proj_loss(out: T.Tensor, r: np.ndarray) -> T.Tensor:
    return T.sum_(out * T.Tensor(r, dtype=np.float64))


def _shape(rng, ndim_lo=1, ndim_hi=3, size_hi=4):
    return tuple(int(s) for s in rng.integers(1, size_hi + 1, size=int(rng.integers(ndim_lo, ndim_hi + 1))))


def _broadcast_pair(rng):
    a = _shape(rng, 1, 3)
    b = list(a)
    for i in range(len(b)):
        if rng.random() < 0.3:
            b[i] = 1
    drop = int(rng.integers(0, len(b)))
    return a, tuple(b[drop:])


def _elementwise(fn, lo=None):
    def build(rng):
        shape = _shape(rng)
        x = _leaf(rng, shape, lo)
        if fn is T.relu:
            # keep entries away from the kink
            x.data = np.where(np.abs(x.data) < 0.05, 0.3, x.data)
        r = rng.normal(size=shape)
        return (lambda: _proj_loss(fn(x), r)), [x]
    return build


def _binary(fn, positive_b=False):
    def build(rng):
        sa, sb = _broadcast_pair(rng)
        if rng.random() < 0.5:
            sa, sb = sb, sa
        a = _leaf(rng, sa)
        b = _leaf(rng, sb, 0.5 if positive_b else None)
        r = rng.normal(size=np.broadcast_shapes(sa, sb))
        return (lambda: _proj_loss(fn(a, b), r)), [a, b]
    return build


def _matmul(rng):
    kind = int(rng.integers(4))
    m, k, n, b = (int(x) for x in rng.integers(1, 5, size=4))
    shapes = [((m, k), (k, n)), ((b, m, k), (k, n)), ((m, k), (b, k, n)), ((b, 2, m, k), (1, 2, k, n))][kind]
    a, w = _leaf(rng, shapes[0]), _leaf(rng, shapes[1])
    r = rng.normal(size=np.matmul(a.data, w.data).shape)
    return (lambda: _proj_loss(T.matmul(a, w), r)), [a, w]


def _attention(rng):
    B, H_, Lq, Lk, d = (int(x) for x in rng.integers(1, 4, size=5))
    q, k, v = _leaf(rng, (B, H_, Lq, d)), _leaf(rng, (B, H_, Lk, d)), _leaf(rng, (B, H_, Lk, d))
    mask = rng.random((B, 1, Lq, Lk)) < 0.7
    mask[..., 0] = True
    r = rng.normal(size=(B, H_, Lq, d))
    scale = float(rng.uniform(0.2, 1.0))
    return (lambda: _proj_loss(T.attention(q, k, v, mask, scale), r)), [q, k, v]


def _spmm(rng):
    n, m, c = (int(x) for x in rng.integers(1, 6, size=3))
    adj = sp.random(n, m, density=0.5, random_state=int(rng.integers(1 << 30)), format="csr")
    x = _leaf(rng, (m, c))
    r = rng.normal(size=(n, c))
    return (lambda: _proj_loss(T.spmm(adj, x), r)), [x]


def _reduce(fn):
    def build(rng):
        shape = _shape(rng, 1, 3)
        x = _leaf(rng, shape)
        axis = None if rng.random() < 0.3 else int(rng.integers(len(shape)))
        keep = bool(rng.random() < 0.5)
        out_shape = np.sum(x.data, axis=axis, keepdims=keep).shape
        r = rng.normal(size=out_shape)
        return (lambda: _proj_loss(fn(x, axis, keep), r)), [x]
    return build


def _reshape(rng):
    shape = _shape(rng, 2, 3)
    x = _leaf(rng, shape)
    new = (int(np.prod(shape[:-1])), shape[-1])[::-1 if rng.random() < 0.5 else 1]
    r = rng.normal(size=new)
    return (lambda: _proj_loss(T.reshape(x, new), r)), [x]


def _transpose(rng):
    shape = _shape(rng, 2, 4)
    axes = tuple(int(a) for a in rng.permutation(len(shape)))
    x = _leaf(rng, shape)
    r = rng.normal(size=tuple(shape[a] for a in axes))
    return (lambda: _proj_loss(T.transpose(x, axes), r)), [x]


def _index(rng):
    n, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    x = _leaf(rng, (n, c))
    idx = rng.integers(0, n, size=int(rng.integers(1, 6)))  # repeats exercise accumulation
    r = rng.normal(size=(len(idx), c))
    return (lambda: _proj_loss(T.index(x, idx), r)), [x]


def _embedding(rng):
    v, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    table = _leaf(rng, (v, c))
    ids = rng.integers(0, v, size=(int(rng.integers(1, 3)), int(rng.integers(1, 4))))
    r = rng.normal(size=ids.shape + (c,))
    return (lambda: _proj_loss(T.embedding(table, ids), r)), [table]


def _concat(rng):
    base = list(_shape(rng, 1, 3))
    axis = int(rng.integers(len(base)))
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        s = list(base)
        s[axis] = int(rng.integers(1, 4))
        parts.append(_leaf(rng, tuple(s)))
    r = rng.normal(size=np.concatenate([p.data for p in parts], axis=axis).shape)
    return (lambda: _proj_loss(T.concat(parts, axis), r)), parts


def _softmax_like(fn):
    def build(rng):
        shape = _shape(rng, 1, 3)
        x = _leaf(rng, shape)
        axis = int(rng.integers(-len(shape), len(shape)))
        r = rng.normal(size=shape)
        return (lambda: _proj_loss(fn(x, axis), r)), [x]
    return build


def _layer_norm(rng):
    shape = _shape(rng, 1, 3)[:-1] + (int(rng.integers(2, 6)),)
    x, g, b = _leaf(rng, shape), _leaf(rng, shape[-1:]), _leaf(rng, shape[-1:])
    r = rng.normal(size=shape)
    return (lambda: _proj_loss(T.layer_norm(x, g, b), r)), [x, g, b]


def _cross_entropy(rng):
    lead = _shape(rng, 1, 2)
    V = int(rng.integers(2, 7))
    x = _leaf(rng, lead + (V,))
    target = rng.integers(0, V, size=lead)
    weights = (rng.random(lead) < 0.7).astype(np.float64) if rng.random() < 0.5 else None
    reduction = "sum" if rng.random() < 0.5 else "mean"
    return (lambda: T.softmax_cross_entropy(x, target, weights, reduction)), [x]


def _module(builder):
    def build(rng):
        mod, x, fn = builder(rng)
        params = [p for _, p in mod.named_parameters()]
        return fn, [x] + params
    return build


def _linear(rng):
    with T.precision("f64"):
        lin = nn.Linear(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    x = _leaf(rng, (int(rng.integers(1, 3)), int(rng.integers(1, 4)), lin.weight.shape[0]))
    r = rng.normal(size=x.shape[:-1] + (lin.weight.shape[1],))
    return lin, x, lambda: _proj_loss(lin(x), r)


def _mha(rng):
    heads = int(rng.integers(1, 3))
    d = heads * int(rng.integers(2, 4)) if heads > 1 else int(rng.integers(4, 7))
    with T.precision("f64"):
        block = nn.TransformerBlock(rng, d, heads)
    B, L = int(rng.integers(1, 3)), int(rng.integers(1, 5))
    x = _leaf(rng, (B, L, d))
    mask = np.tril(np.ones((L, L), dtype=bool))[None, None] if rng.random() < 0.5 else None
    r = rng.normal(size=(B, L, d))
    return block, x, lambda: _proj_loss(block(x, mask), r)


OPS: dict[str, Callable] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_b=True),
    "relu": _elementwise(T.relu),
    "exp": _elementwise(T.exp),
    "log": _elementwise(T.log, lo=0.5),
    "tanh": _elementwise(T.tanh),
    "matmul": _matmul,
    "attention": _attention,
    "spmm": _spmm,
    "sum": _reduce(T.sum_),
    "mean": _reduce(T.mean),
    "reshape": _reshape,
    "transpose": _transpose,
    "index": _index,
    "embedding": _embedding,
    "concat": _concat,
    "softmax": _softmax_like(T.softmax),
    "log_softmax": _softmax_like(T.log_softmax),
    "layer_norm": _layer_norm,
    "softmax_cross_entropy": _cross_entropy,
    "linear": _module(_linear),
    "transformer_block": _module(_mha),
}


def check_op(name: str, configs: int = 20, seed: int = 0) -> SuiteEntry:
    t0 = time.perf_counter()
    worst = 0.0
    with T.precision("f64"):
        for c in range(configs):
            rng = np.random.default_rng([seed, c, len(name)])
            loss_fn, leaves = OPS[name](rng)
            for res in check_gradients(loss_fn, leaves, h=H, rng=rng):
                worst = max(worst, res.max_rel_err)
    return SuiteEntry(name, configs, worst, time.perf_counter() - t0)


def tiny_model_batch(seed: int):
    """A small random model plus a 2-example batch carrying slot labels and targets."""
    from .dataset import build_vocabs
    from .model import MMRCR, ModelConfig, encode_example
    from .prompts import build_qa_dataset, load_templates
    from .smiles import NONE_LABEL, SLOT_NAMES, parse_reaction
    from .synthetic import condition_rows

    rng = np.random.default_rng(seed)
    rows = condition_rows(12, seed)
    recs = [parse_reaction(r["rxn_smiles"], id=r["id"], corpus="",
                           slots=tuple(r[s] or NONE_LABEL for s in SLOT_NAMES)) for r in rows]
    exs = list(build_qa_dataset(recs, load_templates(), seed))
    conds, toks = build_vocabs(recs, texts=[e.question for e in exs])
    width = 4 * int(rng.integers(1, 3))
    cfg = ModelConfig(seq_max_len=int(rng.integers(8, 17)), seq_width=width, seq_heads=2, seq_layers=1,
                      graph_hidden=width, graph_width=width, graph_layers=int(rng.integers(1, 3)),
                      llm_width=width, llm_heads=2, llm_layers=1, smiles_tokens=int(rng.integers(2, 6)),
                      graph_tokens=3, projector_heads=2, projector_depth=1, max_text=6, max_target=8)
    model = MMRCR(rng, cfg, len(toks), conds.sizes())
    batch = [encode_example(e, toks, conds, cfg) for e in exs[:2]]
    return model, batch


def check_model(configs: int = 20, seed: int = 0, max_entries: int = 1) -> SuiteEntry:
    """Per config: one random entry of every parameter tensor, plus the
    directional derivative along a random direction over all parameters."""
    t0 = time.perf_counter()
    worst = 0.0
    with T.precision("f64"):
        for c in range(configs):
            model, batch = tiny_model_batch(seed * 1000 + c)
            task = "classify" if c % 2 == 0 else "generate"
            names, params = zip(*model.named_parameters())
            rng = np.random.default_rng([seed, c])
            results = check_gradients(lambda: model.loss(batch, task), list(params), names,
                                      h=H, max_entries=max_entries, rng=rng)
            worst = max(worst, max(r.max_rel_err for r in results))
            worst = max(worst, directional_check(lambda: model.loss(batch, task), list(params), h=H, rng=rng))
    return SuiteEntry("composed_model", configs, worst, time.perf_counter() - t0)


def run_suite(configs: int = 20, model_configs: int = 20, seed: int = 0,
              report: Optional[Callable[[SuiteEntry], None]] = None) -> list[SuiteEntry]:
    out = []
    for name in OPS:
        entry = check_op(name, configs, seed)
        out.append(entry)
        if report:
            report(entry)
    entry = check_model(model_configs, seed)
    out.append(entry)
    if report:
        report(entry)
    return out
