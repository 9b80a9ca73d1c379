"""Filtered ranking evaluation: MRR and Hits@{1,10} per category and arity bucket."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tensor as T
from .data import generate_instances
from .errors import ContractError, InputError
from .graph import collate
from .model import class_logits, load_checkpoint, mask_hidden, vocab_sizes_of

ENTITY_CATEGORIES = ("all-entities", "subject-object", "aux-values")
RELATION_CATEGORIES = ("all-relations", "primary-relation")
CATEGORIES = ENTITY_CATEGORIES + RELATION_CATEGORIES
BUCKETS = ("n=2", "n>2", "all")
HITS_AT = (1, 10)


def categories_of(position):
    if position == 0:
        return ("all-relations", "primary-relation")
    if position in (1, 2):
        return ("all-entities", "subject-object")
    if (position - 3) % 2 == 0:
        return ("all-relations",)
    return ("all-entities", "aux-values")


def rank_answer(scores, gold, filter_set=()):
    """Mean-tie filtered rank of ``gold`` (1-based).

    Candidates in ``filter_set`` other than ``gold`` are ignored; the rank is
    ``1 + #higher + floor(#tied / 2)`` over the remaining candidates.
    """
    scores = np.asarray(scores)
    if not 0 <= gold < scores.shape[-1]:
        raise ContractError(f"gold index {gold} outside {scores.shape[-1]} candidates")
    g = scores[gold]
    if np.isnan(g):
        raise ContractError("gold score is NaN")
    keep = np.ones(scores.shape[-1], dtype=bool)
    drop = [c for c in filter_set if c != gold]
    if drop:
        keep[drop] = False
    keep[gold] = False
    rest = scores[keep]
    higher = int(np.count_nonzero(rest > g))
    tied = int(np.count_nonzero(rest == g))
    return 1 + higher + tied // 2


class Metrics:
    """Rank histograms per ``(category, bucket)``; aggregates are order-independent."""

    def __init__(self):
        self.ranks = {(c, b): Counter() for c in CATEGORIES for b in BUCKETS}

    def add(self, position, arity, rank):
        bucket = "n=2" if arity == 2 else "n>2"
        for cat in categories_of(position):
            self.ranks[(cat, bucket)][rank] += 1
            self.ranks[(cat, "all")][rank] += 1

    def merge(self, other):
        for key, hist in other.ranks.items():
            self.ranks[key].update(hist)
        return self

    def cell(self, category, bucket="all"):
        hist = self.ranks[(category, bucket)]
        n = sum(hist.values())
        out = {"count": n}
        if n == 0:
            out.update(mrr=float("nan"), **{f"hits{k}": float("nan") for k in HITS_AT})
            return out
        out["mrr"] = math.fsum(c / r for r, c in hist.items()) / n
        for k in HITS_AT:
            out[f"hits{k}"] = sum(c for r, c in hist.items() if r <= k) / n
        return out

    def to_dict(self):
        return {f"{c}/{b}": self.cell(c, b) for c, b in self.ranks}

    def __eq__(self, other):
        return isinstance(other, Metrics) and self.ranks == other.ranks

    def __repr__(self):
        return f"Metrics(mrr={self.cell('all-entities')['mrr']:.4f} all-entities)"


def metrics_from_ranks(ranks):
    """MRR and Hits@k of a plain list of ranks."""
    m = Metrics()
    for r in ranks:
        m.add(1, 2, r)
    return m.cell("all-entities")


def select_instances(facts, categories=CATEGORIES):
    wanted = set(categories)
    unknown = wanted - set(CATEGORIES)
    if unknown:
        raise InputError(f"unknown categories {sorted(unknown)}; expected {CATEGORIES}")
    return [i for f in facts for i in generate_instances(f) if wanted & set(categories_of(i.position))]


class GranScorer:
    """Batched scorer: list of instances -> list of class-restricted logit rows."""

    def __init__(self, params, config, vocab, batch_size=256):
        self.params = params
        self.config = config
        self.vocab = vocab
        self.batch_size = batch_size

    def __call__(self, instances):
        out = []
        sizes = vocab_sizes_of(self.params, self.vocab.num_relations)
        with T.no_grad():
            for start in range(0, len(instances), self.batch_size):
                chunk = instances[start : start + self.batch_size]
                batch = collate(chunk, self.vocab)
                h1 = mask_hidden(batch, self.params, self.config)
                rows = [None] * len(chunk)
                for entity in (True, False):
                    idx = np.flatnonzero(batch.is_entity == entity)
                    if idx.size:
                        logits = class_logits(h1[idx], self.params, sizes, entity).data
                        for j, i in enumerate(idx):
                            rows[i] = logits[j]
                out.extend(rows)
        return out


def _rank_chunk(instances, scorer, filter_index, vocab):
    scores = scorer(instances)
    local = Metrics()
    for inst, row in zip(instances, scores):
        offset = vocab.entity_offset if inst.is_entity else vocab.relation_offset
        filt = [a - offset for a in filter_index.answers(inst)]
        local.add(inst.position, inst.fact.arity, rank_answer(row, inst.answer - offset, filt))
    return local


def evaluate(facts, scorer, filter_index, vocab, categories=CATEGORIES, chunk_size=1024, threads=1):
    """Rank every selected masked position of ``facts`` and aggregate."""
    instances = select_instances(facts, categories)
    chunks = [instances[i : i + chunk_size] for i in range(0, len(instances), chunk_size)]
    metrics = Metrics()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda c: _rank_chunk(c, scorer, filter_index, vocab), chunks)
            for part in parts:
                metrics.merge(part)
    else:
        for c in chunks:
            metrics.merge(_rank_chunk(c, scorer, filter_index, vocab))
    return metrics


def evaluate_checkpoint(path, dataset, split="test", categories=CATEGORIES, threads=1, batch_size=256):
    params, config, header = load_checkpoint(path, vocab=dataset.vocab)
    scorer = GranScorer(params, config, dataset.vocab, batch_size)
    metrics = evaluate(dataset[split], scorer, dataset.filter_index, dataset.vocab, categories, threads=threads)
    return metrics, config


def format_report(metrics, config=None, categories=CATEGORIES, title=None):
    """Plain-text table: one row per category and arity bucket."""
    lines = []
    if title:
        lines.append(f"# {title}")
    if config is not None:
        echo = config.to_dict() if hasattr(config, "to_dict") else config
        lines.append("# config: " + json.dumps(echo, sort_keys=True))
    lines.append(f"{'category':<18}{'arity':<7}{'count':>8}{'MRR':>8}{'H@1':>8}{'H@10':>8}")
    for cat in categories:
        for bucket in BUCKETS:
            c = metrics.cell(cat, bucket)
            if c["count"] == 0:
                continue
            lines.append(
                f"{cat:<18}{bucket:<7}{c['count']:>8}{c['mrr']:>8.3f}{c['hits1']:>8.3f}{c['hits10']:>8.3f}"
            )
    return "\n".join(lines) + "\n"
