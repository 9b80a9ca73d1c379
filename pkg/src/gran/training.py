"""Training loop: shuffled masked instances, Adam with warmup/decay, checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, instances_for, load_dataset
from .errors import ConfigError, InputError, NumericError
from .evaluation import GranScorer, evaluate
from .graph import collate
from .model import GranConfig, batch_loss, init_params, load_checkpoint, save_checkpoint
from .optim import LrSchedule, adam_step, lr_at

log = logging.getLogger(__name__)

CONFIG_KEYS = (
    "dataset", "variant", "layers", "heads", "hidden", "ffn_mult", "dropout",
    "eps_entity", "eps_relation", "epochs", "batch", "micro_batch", "lr", "seed", "positional",
)
EXTRA_KEYS = ("eval_every", "regime", "clip_norm")

# Tuned per-dataset values (entity smoothing, relation smoothing, dropout, epochs).
DATASET_PRESETS = {
    "jf17k": dict(eps_entity=0.9, eps_relation=0.0, dropout=0.2, epochs=160),
    "wikipeople": dict(eps_entity=0.2, eps_relation=0.2, dropout=0.1, epochs=200),
    "wikipeople-": dict(eps_entity=0.2, eps_relation=0.1, dropout=0.1, epochs=160),
    "jf17k-3": dict(eps_entity=0.8, eps_relation=0.2, dropout=0.2, epochs=180),
    "jf17k-4": dict(eps_entity=0.8, eps_relation=0.0, dropout=0.3, epochs=160),
    "wikipeople-3": dict(eps_entity=0.8, eps_relation=0.4, dropout=0.3, epochs=100),
    "wikipeople-4": dict(eps_entity=0.8, eps_relation=0.4, dropout=0.3, epochs=100),
}


@dataclass
class TrainPlan:
    config: GranConfig = field(default_factory=GranConfig)
    dataset: str | None = None
    epochs: int = 160
    batch: int = 1024
    micro_batch: int | None = None
    lr: float = 5e-4
    seed: int = 0
    eval_every: int = 0
    regime: str = "select"
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.micro_batch is not None and self.micro_batch < 1:
            raise ConfigError("micro_batch must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.regime not in ("select", "final"):
            raise ConfigError(f"regime must be 'select' or 'final', got {self.regime!r}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("dataset", "epochs", "batch", "micro_batch", "lr", "seed",
                                           "eval_every", "regime", "clip_norm")}
        d["config"] = self.config.to_dict()
        return d


def _coerce(key, text):
    if key in ("dataset", "variant", "regime"):
        return text
    if key == "positional":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"positional: expected a boolean, got {text!r}")
    if key in ("micro_batch", "clip_norm") and text.lower() in ("", "none"):
        return None
    try:
        if key in ("dropout", "eps_entity", "eps_relation", "lr", "clip_norm"):
            return float(text)
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def parse_config_text(text, source=None):
    """``key = value`` lines (``#`` comments) into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS + EXTRA_KEYS:
            raise ConfigError(f"{source or 'config'}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def plan_from_dict(values, base_dir=None):
    """Build a TrainPlan; unset keys fall back to the dataset preset, then defaults."""
    values = dict(values)
    dataset = values.get("dataset")
    if dataset is not None and base_dir is not None and not Path(dataset).is_absolute():
        dataset = str((Path(base_dir) / dataset).resolve())
    preset = DATASET_PRESETS.get(Path(dataset).name.lower(), {}) if dataset else {}
    merged = {**preset, **values}
    model_keys = {"variant", "layers", "heads", "hidden", "ffn_mult", "dropout", "eps_entity",
                  "eps_relation", "positional"}
    config = GranConfig(**{k: v for k, v in merged.items() if k in model_keys})
    plan_keys = {"epochs", "batch", "micro_batch", "lr", "seed", "eval_every", "regime", "clip_norm"}
    return TrainPlan(config=config, dataset=dataset, **{k: v for k, v in merged.items() if k in plan_keys})


def load_plan(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file {path} not found")
    values = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    return plan_from_dict(values, base_dir=path.parent)


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, 2, epoch]).permutation(n)


def epoch_batches(n, b, seed, epoch):
    """Index arrays of one shuffled epoch; the last short batch is kept."""
    order = epoch_order(n, seed, epoch)
    return [order[i : i + b] for i in range(0, n, b)]


def make_batches(instances, b, seed, vocab, epoch=0):
    """Yield ``(instances, GraphBatch)`` for one shuffled epoch."""
    if b < 1:
        raise ConfigError("batch size must be >= 1")
    for idx in epoch_batches(len(instances), b, seed, epoch):
        chunk = [instances[i] for i in idx]
        yield chunk, collate(chunk, vocab)


def _rng_from_state(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


class Trainer:
    """Step-level training driver; resumable from its own checkpoints."""

    def __init__(self, plan: TrainPlan, dataset: Dataset, out_dir=None):
        self.plan = plan
        self.config = plan.config
        self.dataset = dataset
        self.vocab = dataset.vocab
        self.out_dir = Path(out_dir) if out_dir is not None else None
        facts = list(dataset["train"])
        if plan.regime == "final":
            facts += dataset.splits.get("dev", [])
        if not facts:
            raise InputError("no training facts")
        self.instances = instances_for(facts)
        self.steps_per_epoch = math.ceil(len(self.instances) / plan.batch)
        self.total_steps = self.steps_per_epoch * plan.epochs
        self.schedule = LrSchedule(plan.lr, self.total_steps) if self.total_steps else None
        self.params = init_params(
            self.config, self.vocab.num_relations, self.vocab.num_entities, np.random.default_rng([plan.seed, 0])
        )
        self.dropout_rng = np.random.default_rng([plan.seed, 1])
        self.global_step = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.best_dev_mrr = -1.0
        self._order_epoch = None
        self._order = None

    @property
    def done(self):
        return self.global_step >= self.total_steps

    def _batch_indices(self):
        if self._order_epoch != self.epoch:
            self._order = epoch_batches(len(self.instances), self.plan.batch, self.plan.seed, self.epoch)
            self._order_epoch = self.epoch
        return self._order[self.batch_in_epoch]

    def train_step(self):
        """One optimizer update; returns the log record."""
        if self.done:
            raise RuntimeError("training already finished")
        t0 = time.perf_counter()
        idx = self._batch_indices()
        micro = self.plan.micro_batch or len(idx)
        total = 0.0
        for start in range(0, len(idx), micro):
            chunk = [self.instances[i] for i in idx[start : start + micro]]
            batch = collate(chunk, self.vocab)
            loss = batch_loss(
                batch, self.params, self.config, self.vocab.num_relations,
                training=True, rng=self.dropout_rng, normalizer=len(idx),
            )
            value = loss.item()
            if not math.isfinite(value):
                self._dump_nonfinite(chunk, value)
            loss.backward()
            total += value
        lr = lr_at(self.schedule, self.global_step + 1)
        adam_step(self.params, lr, clip_norm=self.plan.clip_norm)
        self.global_step += 1
        record = {"step": self.global_step, "epoch": self.epoch, "lr": lr, "loss": total}
        self.batch_in_epoch += 1
        if self.batch_in_epoch == self.steps_per_epoch:
            self.epoch += 1
            self.batch_in_epoch = 0
        record["wall_ms"] = round(1000.0 * (time.perf_counter() - t0), 3)
        return record

    def _dump_nonfinite(self, chunk, value):
        msg = f"non-finite loss {value} at step {self.global_step + 1}"
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            dump = {
                "step": self.global_step + 1,
                "epoch": self.epoch,
                "loss": repr(value),
                "instances": [
                    {"fact": self.vocab.decode(i.fact).to_record(), "slot": i.slot} for i in chunk
                ],
            }
            path = self.out_dir / "nonfinite_batch.json"
            path.write_text(json.dumps(dump, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
            msg += f"; batch dumped to {path}"
        raise NumericError(msg)

    def dev_mrr(self):
        dev = self.dataset.splits.get("dev") or []
        if not dev:
            return float("nan")
        scorer = GranScorer(self.params, self.config, self.vocab)
        metrics = evaluate(dev, scorer, self.dataset.filter_index, self.vocab, categories=("all-entities",))
        return metrics.cell("all-entities")["mrr"]

    def state_header(self):
        return {
            "trainer": {
                "global_step": self.global_step,
                "epoch": self.epoch,
                "batch_in_epoch": self.batch_in_epoch,
                "total_steps": self.total_steps,
                "dropout_rng": self.dropout_rng.bit_generator.state,
                "best_dev_mrr": self.best_dev_mrr,
            },
            "plan": self.plan.to_dict(),
        }

    def save(self, path):
        save_checkpoint(path, self.params, self.config, self.vocab, extra=self.state_header(), with_optimizer=True)

    @classmethod
    def resume(cls, path, plan, dataset, out_dir=None):
        trainer = cls(plan, dataset, out_dir)
        params, config, header = load_checkpoint(path, expected_config=plan.config, vocab=dataset.vocab)
        state = header.get("trainer")
        if state is None or state["total_steps"] != trainer.total_steps:
            raise InputError(f"{path}: checkpoint does not belong to this training plan")
        trainer.params = params
        trainer.global_step = state["global_step"]
        trainer.epoch = state["epoch"]
        trainer.batch_in_epoch = state["batch_in_epoch"]
        trainer.best_dev_mrr = state["best_dev_mrr"]
        trainer.dropout_rng = _rng_from_state(state["dropout_rng"])
        return trainer

    def run(self, log_file=None, on_epoch=None):
        """Train to completion, evaluating dev every ``eval_every`` epochs."""
        history = []
        while not self.done:
            epoch_before = self.epoch
            record = self.train_step()
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if self.epoch != epoch_before:
                log.info("epoch %d done: step %d loss %.4f lr %.2e", epoch_before, record["step"],
                         record["loss"], record["lr"])
                self._end_of_epoch()
                if on_epoch is not None:
                    on_epoch(self)
        return history

    def _end_of_epoch(self):
        every = self.plan.eval_every
        if not every or self.plan.regime == "final" or self.epoch % every:
            return
        mrr = self.dev_mrr()
        log.info("epoch %d dev MRR %.4f", self.epoch, mrr)
        if mrr > self.best_dev_mrr:
            self.best_dev_mrr = mrr
            if self.out_dir is not None:
                self.save(self.out_dir / "best.ckpt")


@dataclass
class TrainResult:
    final_checkpoint: Path
    log_path: Path
    history: list
    best_dev_mrr: float
    best_checkpoint: Path | None = None


def run_training(plan, out_dir, dataset=None):
    """Train per ``plan``, writing ``final.ckpt`` and ``train_log.jsonl`` under ``out_dir``.

    With zero epochs the initialization checkpoint is written and no step runs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        if plan.dataset is None:
            raise ConfigError("plan names no dataset")
        dataset = load_dataset(plan.dataset)
    trainer = Trainer(plan, dataset, out_dir)
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_file:
        history = trainer.run(log_file)
    final = out_dir / "final.ckpt"
    trainer.save(final)
    best = out_dir / "best.ckpt"
    return TrainResult(final, log_path, history, trainer.best_dev_mrr, best if best.exists() else None)


def with_overrides(plan, **changes):
    """Copy of ``plan`` with plan or model-config fields replaced."""
    model_fields = set(GranConfig.__dataclass_fields__)
    cfg = {k: v for k, v in changes.items() if k in model_fields}
    rest = {k: v for k, v in changes.items() if k not in model_fields}
    config = replace(plan.config, **cfg) if cfg else plan.config
    return replace(plan, config=config, **rest)
