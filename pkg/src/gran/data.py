"""N-ary facts: ingestion, vocabulary, dev splitting, masked instances, filtering.

A fact is a primary ``(subject, relation, object)`` triple plus an ordered
tuple of ``(attribute, value)`` pairs. Facts hold names straight out of the
parsers and integer ids once encoded by a :class:`Vocabulary`.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError

MASK_TOKEN = "[MASK]"
PAD_TOKEN = "[PAD]"
MASK_ID = 0
PAD_ID = 1

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Fact:
    subject: object
    relation: object
    object: object
    aux: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "aux", tuple(tuple(p) for p in self.aux))

    @property
    def m(self):
        return len(self.aux)

    @property
    def arity(self):
        return 2 + len(self.aux)

    def vertices(self):
        """Elements in canonical order ``(r, s, o, a1, v1, ..., am, vm)``."""
        out = [self.relation, self.subject, self.object]
        for a, v in self.aux:
            out.extend((a, v))
        return tuple(out)

    @classmethod
    def from_vertices(cls, verts):
        verts = tuple(verts)
        if len(verts) < 3 or len(verts) % 2 == 0:
            raise ValueError(f"vertex sequence of length {len(verts)} is not 2m+3")
        pairs = tuple(zip(verts[3::2], verts[4::2]))
        return cls(verts[1], verts[0], verts[2], pairs)

    def to_record(self):
        return {
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "aux": [list(p) for p in self.aux],
        }


def is_entity_position(position):
    return position in (1, 2) or (position >= 3 and (position - 3) % 2 == 1)


def slot_name(position):
    if position == 0:
        return "relation"
    if position == 1:
        return "subject"
    if position == 2:
        return "object"
    i, rem = divmod(position - 3, 2)
    return f"{'value' if rem else 'attr'}:{i}"


def slot_position(name, m):
    """Inverse of :func:`slot_name`; checks the slot exists for ``m`` pairs."""
    fixed = {"relation": 0, "subject": 1, "object": 2}
    if name in fixed:
        return fixed[name]
    kind, _, idx = name.partition(":")
    if kind not in ("attr", "value") or not idx.isdigit():
        raise InputError(f"unknown slot {name!r}; expected subject|object|relation|attr:i|value:i")
    i = int(idx)
    if i >= m:
        raise InputError(f"slot {name!r} but the fact has only {m} auxiliary pairs")
    return 3 + 2 * i + (kind == "value")


@dataclass(frozen=True)
class MaskedInstance:
    """A fact with exactly one element (at canonical ``position``) hidden."""

    fact: Fact
    position: int

    @property
    def answer(self):
        return self.fact.vertices()[self.position]

    @property
    def slot(self):
        return slot_name(self.position)

    @property
    def is_entity(self):
        return is_entity_position(self.position)

    def masked_vertices(self, mask=MASK_ID):
        verts = list(self.fact.vertices())
        verts[self.position] = mask
        return tuple(verts)


def generate_instances(fact):
    """All 2m+3 single-mask instances of ``fact``, in canonical position order."""
    return [MaskedInstance(fact, p) for p in range(2 * fact.m + 3)]


def instances_for(facts):
    out = []
    for f in facts:
        out.extend(generate_instances(f))
    return out


# ---------------------------------------------------------------------------
# parsing


def _check_name(value, field_name, line, source):
    if not isinstance(value, str) or not value.strip():
        raise ParseError(f"field {field_name!r} must be a nonempty string", line, source)
    if "\n" in value or "\r" in value:
        raise ParseError(f"field {field_name!r} contains a line break", line, source)
    return value


def parse_canonical(lines, source=None):
    """Parse line-delimited JSON records with subject/relation/object/aux."""
    facts = []
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno, source) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", lineno, source)
        for key in ("subject", "relation", "object"):
            if key not in rec:
                raise ParseError(f"missing field {key!r}", lineno, source)
        s = _check_name(rec["subject"], "subject", lineno, source)
        r = _check_name(rec["relation"], "relation", lineno, source)
        o = _check_name(rec["object"], "object", lineno, source)
        aux = rec.get("aux") or []
        if not isinstance(aux, list):
            raise ParseError("field 'aux' must be a list of [attribute, value] pairs", lineno, source)
        pairs = []
        for pair in aux:
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ParseError("aux entries must be [attribute, value] pairs", lineno, source)
            pairs.append(
                (
                    _check_name(pair[0], "aux attribute", lineno, source),
                    _check_name(pair[1], "aux value", lineno, source),
                )
            )
        facts.append(Fact(s, r, o, tuple(pairs)))
    return facts


def format_canonical(fact):
    return json.dumps(fact.to_record(), ensure_ascii=False)


def write_canonical(path, facts):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for fact in facts:
            f.write(format_canonical(fact))
            f.write("\n")


def read_canonical(path):
    with open(path, encoding="utf-8") as f:
        return parse_canonical(f, source=str(path))


def convert_jf17k(relation, values, schema=None):
    """Map a positional JF17K tuple to a canonical record.

    The first two values become subject and object; value k >= 3 (1-based)
    becomes an aux pair whose attribute is ``schema[relation][k-1]`` when a
    schema is supplied, else the synthesized name ``"<relation>#<k>"``.
    """
    values = list(values)
    if len(values) < 2:
        raise InputError(f"JF17K tuple for {relation!r} has {len(values)} value(s); need >= 2")
    names = (schema or {}).get(relation)
    if names is not None and len(names) != len(values):
        raise InputError(
            f"schema for {relation!r} lists {len(names)} attributes, tuple has {len(values)} values"
        )
    aux = []
    for k, value in enumerate(values[2:], start=3):
        attr = names[k - 1] if names is not None else f"{relation}#{k}"
        aux.append([attr, value])
    return {"subject": values[0], "relation": relation, "object": values[1], "aux": aux}


def parse_jf17k(lines, schema=None, source=None):
    """Parse ``relation<TAB>value1<TAB>value2...`` lines into facts."""
    facts = []
    for lineno, raw in enumerate(lines, 1):
        raw = raw.rstrip("\r\n")
        if not raw.strip():
            continue
        parts = raw.split("\t") if "\t" in raw else raw.split()
        parts = [p.strip() for p in parts]
        if any(not p for p in parts):
            raise ParseError("empty field", lineno, source)
        try:
            rec = convert_jf17k(parts[0], parts[1:], schema)
        except InputError as exc:
            raise ParseError(str(exc), lineno, source) from None
        facts.append(Fact(rec["subject"], rec["relation"], rec["object"], rec["aux"]))
    return facts


ENTITY_PATTERN = re.compile(r"^Q\d+$")


def parse_wikipeople(lines, filter_literals=False, entity_pattern=ENTITY_PATTERN, source=None):
    """Parse WikiPeople statements (one JSON object per line).

    The primary triple comes from the ``<rel>_h`` / ``<rel>_t`` keys; every
    other key except ``N`` is an attribute whose value(s) become aux pairs in
    key order. With ``filter_literals`` a statement is dropped when any of its
    values fails ``entity_pattern``.
    """
    facts = []
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno, source) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", lineno, source)
        heads = [k for k in rec if k.endswith("_h")]
        if len(heads) != 1 or heads[0][:-2] + "_t" not in rec:
            raise ParseError("expected exactly one <rel>_h / <rel>_t key pair", lineno, source)
        rel = heads[0][:-2]
        s = _single(rec[heads[0]], lineno, source)
        o = _single(rec[rel + "_t"], lineno, source)
        aux = []
        for key, val in rec.items():
            if key in (heads[0], rel + "_t", "N"):
                continue
            for v in val if isinstance(val, list) else [val]:
                aux.append((key, _check_name(v, key, lineno, source)))
        if filter_literals:
            values = [s, o] + [v for _, v in aux]
            if not all(entity_pattern.match(v) for v in values):
                continue
        facts.append(Fact(s, rel, o, tuple(aux)))
    return facts


def _single(val, line, source):
    if isinstance(val, list):
        if len(val) != 1:
            raise ParseError("primary subject/object must be a single value", line, source)
        val = val[0]
    return _check_name(val, "primary value", line, source)


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Unified id space: ``[MASK]``, ``[PAD]``, relations, then entities."""

    specials = (MASK_TOKEN, PAD_TOKEN)

    def __init__(self, relations, entities):
        self.relations = list(relations)
        self.entities = list(entities)
        self._rel = {n: i for i, n in enumerate(self.relations)}
        self._ent = {n: i for i, n in enumerate(self.entities)}
        if len(self._rel) != len(self.relations) or len(self._ent) != len(self.entities):
            raise InputError("duplicate name in vocabulary")

    @property
    def relation_offset(self):
        return len(self.specials)

    @property
    def entity_offset(self):
        return len(self.specials) + len(self.relations)

    @property
    def num_relations(self):
        return len(self.relations)

    @property
    def num_entities(self):
        return len(self.entities)

    def __len__(self):
        return len(self.specials) + len(self.relations) + len(self.entities)

    def relation_id(self, name):
        try:
            return self.relation_offset + self._rel[name]
        except KeyError:
            raise InputError(f"unknown relation {name!r}") from None

    def entity_id(self, name):
        try:
            return self.entity_offset + self._ent[name]
        except KeyError:
            raise InputError(f"unknown entity {name!r}") from None

    def lookup(self, name, kind):
        if kind == "relation":
            return self.relation_id(name)
        if kind == "entity":
            return self.entity_id(name)
        if kind == "special":
            return self.specials.index(name)
        raise ValueError(f"unknown kind {kind!r}")

    def kind(self, idx):
        if not 0 <= idx < len(self):
            raise IndexError(f"id {idx} outside vocabulary of size {len(self)}")
        if idx < self.relation_offset:
            return "special"
        return "relation" if idx < self.entity_offset else "entity"

    def name(self, idx):
        kind = self.kind(idx)
        if kind == "special":
            return self.specials[idx]
        if kind == "relation":
            return self.relations[idx - self.relation_offset]
        return self.entities[idx - self.entity_offset]

    def encode(self, fact):
        return Fact(
            self.entity_id(fact.subject),
            self.relation_id(fact.relation),
            self.entity_id(fact.object),
            tuple((self.relation_id(a), self.entity_id(v)) for a, v in fact.aux),
        )

    def decode(self, fact):
        return Fact(
            self.name(fact.subject),
            self.name(fact.relation),
            self.name(fact.object),
            tuple((self.name(a), self.name(v)) for a, v in fact.aux),
        )

    def dumps(self):
        lines = [f"[special] {len(self.specials)}", *self.specials]
        lines += [f"[relations] {len(self.relations)}", *self.relations]
        lines += [f"[entities] {len(self.entities)}", *self.entities]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text, source=None):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        sections = {}
        pos = 0
        for header in ("[special]", "[relations]", "[entities]"):
            if pos >= len(lines):
                raise ParseError(f"missing section {header}", pos + 1, source)
            tag, _, count = lines[pos].partition(" ")
            if tag != header or not count.isdigit():
                raise ParseError(f"expected '{header} <count>'", pos + 1, source)
            n = int(count)
            body = lines[pos + 1 : pos + 1 + n]
            if len(body) != n:
                raise ParseError(f"section {header} truncated", pos + 1, source)
            sections[header] = body
            pos += 1 + n
        if pos != len(lines):
            raise ParseError("unexpected trailing lines", pos + 1, source)
        if tuple(sections["[special]"]) != cls.specials:
            raise ParseError("special tokens section does not match", 2, source)
        return cls(sections["[relations]"], sections["[entities]"])

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"), source=str(path))

    def fingerprint(self):
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def build_vocab(facts):
    """Vocabulary in first-appearance order over ``facts``."""
    facts = list(facts)
    if not facts:
        raise InputError("cannot build a vocabulary from zero facts")
    rels, ents = {}, {}
    for f in facts:
        ents.setdefault(f.subject, None)
        rels.setdefault(f.relation, None)
        ents.setdefault(f.object, None)
        for a, v in f.aux:
            rels.setdefault(a, None)
            ents.setdefault(v, None)
    return Vocabulary(rels, ents)


def split_dev(facts, fraction=0.2, seed=0):
    """Seeded partition of ``facts`` into ``(train, dev)``.

    The dev size is ``fraction * len(facts)`` rounded half up; both parts keep
    the input order.
    """
    facts = list(facts)
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"dev fraction must lie in (0, 1), got {fraction}")
    if not facts:
        raise InputError("cannot split an empty train set")
    n_dev = math.floor(fraction * len(facts) + 0.5)
    perm = np.random.default_rng(seed).permutation(len(facts))
    dev_idx = set(perm[:n_dev].tolist())
    train = [f for i, f in enumerate(facts) if i not in dev_idx]
    dev = [f for i, f in enumerate(facts) if i in dev_idx]
    return train, dev


# ---------------------------------------------------------------------------
# filtering


def pattern_key(fact, position, mask=MASK_ID):
    """Order-insensitive key for ``fact`` with ``position`` masked.

    Aux pairs are sorted so facts that differ only in the order of their
    qualifiers share filter sets. Named facts mix string names with the
    integer mask, so pairs sort by ``repr``.
    """
    verts = list(fact.vertices())
    verts[position] = mask
    pairs = tuple(sorted(zip(verts[3::2], verts[4::2]), key=repr))
    return (verts[0], verts[1], verts[2], pairs)


class FilterIndex:
    """Known answers for every masked pattern across the supplied splits."""

    def __init__(self, facts=()):
        self._index = defaultdict(set)
        for f in facts:
            self.add(f)

    def add(self, fact):
        verts = fact.vertices()
        for p in range(len(verts)):
            self._index[pattern_key(fact, p)].add(verts[p])

    def answers(self, instance):
        return self._index.get(pattern_key(instance.fact, instance.position), set())

    def __len__(self):
        return len(self._index)


def build_filter_index(*splits):
    index = FilterIndex()
    for facts in splits:
        for f in facts:
            index.add(f)
    return index


# ---------------------------------------------------------------------------
# prepared datasets on disk


@dataclass
class Dataset:
    """Id-encoded splits plus their vocabulary."""

    vocab: Vocabulary
    splits: dict
    _filter: FilterIndex | None = field(default=None, repr=False)

    def __getitem__(self, split):
        try:
            return self.splits[split]
        except KeyError:
            raise InputError(f"dataset has no {split!r} split") from None

    @property
    def filter_index(self):
        if self._filter is None:
            self._filter = build_filter_index(*self.splits.values())
        return self._filter

    @classmethod
    def from_named(cls, named_splits, vocab=None):
        if vocab is None:
            vocab = build_vocab(f for facts in named_splits.values() for f in facts)
        return cls(vocab, {k: [vocab.encode(f) for f in v] for k, v in named_splits.items()})


def dataset_stats(named_splits):
    facts = [f for fs in named_splits.values() for f in fs]
    vocab = build_vocab(facts)
    arities = [f.arity for f in facts]
    higher = sum(a > 2 for a in arities)
    return {
        "facts": len(facts),
        "higher_arity_facts": higher,
        "higher_arity_pct": round(100.0 * higher / len(facts), 1) if facts else 0.0,
        "entities": vocab.num_entities,
        "relations": vocab.num_relations,
        "train": len(named_splits.get("train", [])),
        "dev": len(named_splits.get("dev", [])),
        "test": len(named_splits.get("test", [])),
        "arity_min": min(arities),
        "arity_max": max(arities),
    }


def format_stats(stats):
    rows = [
        ("All facts", f"{stats['facts']:,}"),
        ("Higher-arity facts", f"{stats['higher_arity_facts']:,} ({stats['higher_arity_pct']}%)"),
        ("Entities", f"{stats['entities']:,}"),
        ("Relations", f"{stats['relations']:,}"),
        ("Train", f"{stats['train']:,}"),
        ("Dev", f"{stats['dev']:,}"),
        ("Test", f"{stats['test']:,}"),
        ("Arity", f"{stats['arity_min']}-{stats['arity_max']}"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


_SPLIT_ALIASES = {"train": ("train",), "dev": ("dev", "valid", "validation"), "test": ("test",)}
_EXTENSIONS = {"canonical": (".jsonl", ".json"), "jf17k": (".txt", ""), "wikipeople": (".json", ".jsonl")}


def find_split_files(directory, fmt):
    directory = Path(directory)
    found = {}
    for split, aliases in _SPLIT_ALIASES.items():
        for alias in aliases:
            for prefix in ("", "n-ary_"):
                for ext in _EXTENSIONS[fmt]:
                    path = directory / f"{prefix}{alias}{ext}"
                    if path.is_file() and split not in found:
                        found[split] = path
    return found


def read_split(path, fmt, filter_literals=False, schema=None):
    with open(path, encoding="utf-8") as f:
        if fmt == "canonical":
            return parse_canonical(f, source=str(path))
        if fmt == "jf17k":
            return parse_jf17k(f, schema=schema, source=str(path))
        if fmt == "wikipeople":
            return parse_wikipeople(f, filter_literals=filter_literals, source=str(path))
    raise InputError(f"unknown format {fmt!r}")


def prepare_dataset(input_dir, fmt, out_dir, filter_literals=False, dev_fraction=0.2, seed=0, schema=None):
    """Read raw splits, carve a dev split if absent, and write canonical files.

    Writes ``train.jsonl``, ``dev.jsonl``, ``test.jsonl``, ``vocab.txt`` and
    ``stats.txt``/``stats.json`` under ``out_dir`` and returns the stats.
    """
    if fmt not in _EXTENSIONS:
        raise InputError(f"unknown format {fmt!r}; expected one of {sorted(_EXTENSIONS)}")
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise InputError(f"input directory {input_dir} not found")
    files = find_split_files(input_dir, fmt)
    if "train" not in files or "test" not in files:
        raise InputError(f"{input_dir}: need at least train and test files for format {fmt!r}")
    raw = {k: read_split(p, fmt, filter_literals, schema) for k, p in files.items()}
    vocab = build_vocab(f for k in SPLITS for f in raw.get(k, []))
    named = dict(raw)
    if "dev" not in named:
        if dev_fraction > 0:
            named["train"], named["dev"] = split_dev(raw["train"], dev_fraction, seed)
        else:
            named["dev"] = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_canonical(out_dir / f"{split}.jsonl", named[split])
    vocab.save(out_dir / "vocab.txt")
    stats = dataset_stats({k: named[k] for k in SPLITS})
    (out_dir / "stats.txt").write_text(format_stats(stats), encoding="utf-8")
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    return stats


def load_dataset(directory):
    """Load a directory written by :func:`prepare_dataset`."""
    directory = Path(directory)
    vocab_path = directory / "vocab.txt"
    if not vocab_path.is_file():
        raise InputError(f"{directory}: missing vocab.txt (run prepare first)")
    vocab = Vocabulary.load(vocab_path)
    splits = {}
    for split in SPLITS:
        path = directory / f"{split}.jsonl"
        splits[split] = [vocab.encode(f) for f in read_canonical(path)] if path.is_file() else []
    return Dataset(vocab, splits)
