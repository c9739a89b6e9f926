"""Command-line entry point: ``rxncond <subcommand>`` or ``python -m rxncond``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

log = logging.getLogger("rxncond")


def _precision_from_env() -> None:
    from .autograd import tensor as T
    name = os.environ.get("RXNCOND_PRECISION")
    if name:
        T.set_precision(name)


def _ks(text: str) -> list[int]:
    try:
        ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from exc
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def cmd_build_data(args) -> int:
    from .dataset import build_dataset
    from .retrieval import CorpusIndex
    pool = CorpusIndex.from_jsonl(args.corpus_pool) if args.corpus_pool else None
    info = build_dataset(args.input, args.flavor, args.output, seed=args.seed, expand=args.expand,
                         templates=args.templates, pool=pool, strict=args.strict)
    print(json.dumps(info, indent=1, sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    from .dataset import corpus_stats, load_records
    loaded = load_records(args.input, args.flavor)
    out = corpus_stats(loaded.records)
    out["skipped"] = loaded.skipped
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_train(args) -> int:
    from .trainer import load_config, train
    overrides = {"task": args.task, "seed": args.seed, "data": args.data, "out": args.out,
                 "epochs": args.epochs, "max_lr": args.max_lr,
                 "freeze": list(args.freeze) if args.freeze else None,
                 "precision": os.environ.get("RXNCOND_PRECISION") if args.config is None else None}
    if args.precision:
        overrides["precision"] = args.precision
    cfg = load_config(args.config, **overrides)
    res = train(cfg)
    print(json.dumps({"checkpoint": str(res.checkpoint), "epochs": res.epochs_run, "steps": res.steps,
                      "final_loss": res.final_loss, "train_accuracy": res.train_accuracy,
                      "seconds": round(res.seconds, 2)}, indent=1))
    return 0


def cmd_evaluate(args) -> int:
    from .trainer import evaluate, load_checkpoint, resolve_checkpoint
    ckpt = resolve_checkpoint(args.checkpoint)
    data = args.data or json.loads((ckpt / "meta.json").read_text(encoding="utf-8"))["train"]["data"]
    out = args.out or str(ckpt)
    res = evaluate(ckpt, data, args.split, args.topk, out_dir=out, beam_width=args.beam_width)
    print(json.dumps(res, indent=1, sort_keys=True, default=str))
    return 0


def cmd_recommend(args) -> int:
    from .trainer import read_candidates, recommend
    cands = read_candidates(args.candidates) if args.candidates else None
    ranked = recommend(args.checkpoint, args.reaction, args.role, cands, k=args.k, corpus=args.corpus or "")
    for rank, (label, score) in enumerate(ranked, 1):
        print(f"{rank}\t{label or 'NONE'}\t{score:.6f}")
    return 0


def cmd_check_grad(args) -> int:
    from .gradsuite import run_suite
    t0 = time.perf_counter()
    failed = []

    def report(e):
        print(f"{'PASS' if e.ok else 'FAIL'}  {e.name:<22} configs={e.configs:<3} "
              f"max_rel_err={e.max_rel_err:.2e}  {e.seconds:.1f}s", flush=True)
        if not e.ok:
            failed.append(e.name)

    run_suite(args.configs, args.model_configs, args.seed, report)
    print(f"{'all passed' if not failed else 'failed: ' + ', '.join(failed)} in {time.perf_counter() - t0:.1f}s")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rxncond", description="Reaction condition recommendation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-data", help="CSV -> JSONL instruction dataset")
    b.add_argument("--input", required=True)
    b.add_argument("--flavor", choices=("condition", "500mt"), required=True)
    b.add_argument("--output", required=True, help="dataset directory")
    b.add_argument("--templates", default=None, help="template bank (default: bundled)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--expand", type=int, default=1, help="examples per record")
    b.add_argument("--corpus-pool", default=None, help="JSONL {reaction_smiles, corpus} retrieval pool")
    b.add_argument("--strict", action="store_true", help="fail on the first malformed row")
    b.set_defaults(func=cmd_build_data)

    s = sub.add_parser("stats", help="sparsity and power-law statistics")
    s.add_argument("--input", required=True)
    s.add_argument("--flavor", choices=("condition", "500mt"), default="condition")
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train a classification or generation model")
    t.add_argument("--config", default=None, help="YAML/JSON config file")
    t.add_argument("--task", choices=("classify", "generate"), default=None)
    t.add_argument("--freeze", nargs="*", default=None, metavar="PREFIX",
                   help="parameter-name prefixes to freeze ('backbone' = encoders + decoder body)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--data", default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--max-lr", type=float, default=None)
    t.add_argument("--precision", choices=("f32", "f64"), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="top-k evaluation report for a checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint or run directory")
    e.add_argument("--split", choices=("train", "valid", "test"), default="test")
    e.add_argument("--topk", type=_ks, default=[1, 3, 5, 10])
    e.add_argument("--data", default=None, help="dataset directory (default: the training data)")
    e.add_argument("--out", default=None, help="report directory (default: the checkpoint)")
    e.add_argument("--beam-width", type=int, default=10)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("recommend", help="rank conditions for one reaction")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--reaction", required=True)
    r.add_argument("--role", default="catalyst")
    r.add_argument("--candidates", default=None, help="file with one candidate per line")
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--corpus", default=None)
    r.set_defaults(func=cmd_recommend)

    g = sub.add_parser("check-grad", help="finite-difference gradient suite")
    g.add_argument("--configs", type=int, default=20)
    g.add_argument("--model-configs", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_check_grad)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _precision_from_env()
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        print(f"rxncond {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
