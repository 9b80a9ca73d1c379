"""Command-line entry point: ``gran prepare|train|eval|predict``.

Exit codes: 0 success, 2 bad input or config, 3 contract violation,
4 numeric failure, 1 anything else raised by the library.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import tensor as T
from .checkpoint import load as load_raw
from .data import (
    Fact,
    MaskedInstance,
    Vocabulary,
    is_entity_position,
    load_dataset,
    parse_canonical,
    prepare_dataset,
    slot_position,
)
from .errors import ContractError, GranError, InputError, NumericError
from .evaluation import CATEGORIES, GranScorer, evaluate, format_report
from .graph import collate
from .model import class_logits, config_hash, load_checkpoint, mask_hidden, vocab_sizes_of
from .training import Trainer, load_plan, run_training

log = logging.getLogger("gran")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _inputs_digest(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_file():
            out[str(p)] = _sha256(p)
        elif p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    out[str(child)] = _sha256(child)
    return out


def write_manifest(out_dir, command, argv, inputs, seed=None, config=None):
    """Record what produced the outputs in ``out_dir``; only the timestamp varies between reruns."""
    manifest = {
        "command": command,
        "argv": list(argv),
        "inputs": _inputs_digest(inputs),
        "seed": seed,
        "config_hash": config_hash(config) if config is not None else None,
        "versions": {
            "gran": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _dataset_dir(args, header):
    if args.dataset:
        return Path(args.dataset)
    plan = header.get("plan") or {}
    if plan.get("dataset"):
        return Path(plan["dataset"])
    raise InputError("checkpoint does not record its dataset; pass --dataset")


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args, argv):
    schema = None
    if args.schema:
        schema = json.loads(Path(args.schema).read_text(encoding="utf-8"))
    stats = prepare_dataset(args.input, args.format, args.out, filter_literals=args.filter_literals,
                            dev_fraction=args.dev_fraction, seed=args.seed, schema=schema)
    write_manifest(args.out, "prepare", argv, [args.input] + ([args.schema] if args.schema else []), seed=args.seed)
    print((Path(args.out) / "stats.txt").read_text(encoding="utf-8"), end="")
    return stats


def cmd_train(args, argv):
    plan = load_plan(args.config)
    if plan.dataset is None:
        raise InputError(f"{args.config}: no 'dataset' key")
    out = Path(args.out_dir)
    if args.resume:
        dataset = load_dataset(plan.dataset)
        trainer = Trainer.resume(args.resume, plan, dataset, out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "train_log.jsonl", "a", encoding="utf-8") as f:
            trainer.run(f)
        trainer.save(out / "final.ckpt")
    else:
        result = run_training(plan, out)
        if result.best_checkpoint is not None:
            print(f"best dev MRR {result.best_dev_mrr:.4f} -> {result.best_checkpoint}")
    write_manifest(out, "train", argv, [args.config, plan.dataset], seed=plan.seed, config=plan.config)
    print(f"final checkpoint {out / 'final.ckpt'}")


def cmd_eval(args, argv):
    header, _ = load_raw(args.checkpoint)
    data_dir = _dataset_dir(args, header)
    dataset = load_dataset(data_dir)
    params, config, _ = load_checkpoint(args.checkpoint, vocab=dataset.vocab)
    categories = args.categories.split(",") if args.categories else CATEGORIES
    scorer = GranScorer(params, config, dataset.vocab, batch_size=args.batch_size)
    metrics = evaluate(dataset[args.split], scorer, dataset.filter_index, dataset.vocab, categories,
                       threads=args.threads)
    report = format_report(metrics, config, categories, title=f"{args.split} split, {args.checkpoint}")
    print(report, end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report, encoding="utf-8")
        (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        write_manifest(out, "eval", argv, [args.checkpoint, data_dir], config=config)
    return metrics


def predict_topk(params, config, vocab, fact_record, mask_slot, topk):
    """Top-``topk`` candidates ``[(name, probability), ...]`` for one masked slot.

    The masked slot's value in ``fact_record`` is never looked up, so it may
    be a placeholder such as ``"?"``.
    """
    (named,) = parse_canonical([json.dumps(fact_record)], source="--fact-json")
    position = slot_position(mask_slot, named.m)
    entity = is_entity_position(position)
    ids = []
    for p, name in enumerate(named.vertices()):
        if p == position:
            ids.append(vocab.entity_offset if entity else vocab.relation_offset)
        else:
            ids.append(vocab.lookup(name, "entity" if is_entity_position(p) else "relation"))
    inst = MaskedInstance(Fact.from_vertices(ids), position)
    with T.no_grad():
        h1 = mask_hidden(collate([inst], vocab), params, config)
        logits = class_logits(h1, params, vocab_sizes_of(params, vocab.num_relations), entity).data[0]
    z = logits.astype(np.float64)
    probs = np.exp(z - z.max())
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")[:topk]
    names = vocab.entities if entity else vocab.relations
    return [(names[i], float(probs[i])) for i in order]


def cmd_predict(args, argv):
    header, _ = load_raw(args.checkpoint)
    data_dir = _dataset_dir(args, header)
    vocab = Vocabulary.load(Path(data_dir) / "vocab.txt")
    params, config, _ = load_checkpoint(args.checkpoint, vocab=vocab)
    text = args.fact_json
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text(encoding="utf-8")
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"--fact-json is not valid JSON ({exc.msg})") from None
    ranked = predict_topk(params, config, vocab, record, args.mask_slot, args.topk)
    for i, (name, p) in enumerate(ranked, 1):
        print(f"{i}\t{name}\t{p:.6f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"fact": record, "mask_slot": args.mask_slot,
                   "candidates": [{"name": n, "probability": p} for n, p in ranked]}
        (out / "predictions.json").write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                                              encoding="utf-8")
        write_manifest(out, "predict", argv, [args.checkpoint, Path(data_dir) / "vocab.txt"], config=config)
    return ranked


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="gran", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gran {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert raw splits to canonical files, vocabulary and stats")
    p.add_argument("--input", required=True, help="directory holding the raw split files")
    p.add_argument("--format", required=True, choices=("canonical", "jf17k", "wikipeople"))
    p.add_argument("--filter-literals", action="store_true", help="drop statements with non-entity values")
    p.add_argument("--dev-fraction", type=float, default=0.2, help="carved from train when no dev file exists")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema", help="JSON file mapping JF17K relations to role names")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="trainer checkpoint to continue from")

    p = sub.add_parser("eval", help="filtered ranking metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="prepared dataset directory (default: the one recorded in the checkpoint)")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--categories", help=f"comma-separated subset of {','.join(CATEGORIES)}")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out-dir")

    p = sub.add_parser("predict", help="top-k candidates for one masked slot")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="prepared dataset directory (for the vocabulary)")
    p.add_argument("--fact-json", required=True, help="canonical fact record, inline or as a file path")
    p.add_argument("--mask-slot", required=True, help="relation, subject, object, attr:i or value:i")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out-dir")
    return parser


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def exit_code(exc):
    if isinstance(exc, NumericError):
        return 4
    if isinstance(exc, ContractError):
        return 3
    if isinstance(exc, (InputError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)):
        return 2
    return 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        COMMANDS[args.command](args, argv)
    except (GranError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"gran {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
