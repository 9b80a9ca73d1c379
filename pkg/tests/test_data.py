import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gran.data import (
    Fact,
    FilterIndex,
    MaskedInstance,
    Vocabulary,
    build_filter_index,
    build_vocab,
    convert_jf17k,
    dataset_stats,
    generate_instances,
    instances_for,
    load_dataset,
    parse_canonical,
    parse_jf17k,
    parse_wikipeople,
    prepare_dataset,
    slot_name,
    slot_position,
    split_dev,
    write_canonical,
)
from gran.errors import ConfigError, InputError, ParseError

CURIE_LINE = json.dumps(
    {
        "subject": "MarieCurie",
        "relation": "award-received",
        "object": "NobelPhysics",
        "aux": [["point-in-time", "1903"], ["together-with", "PierreCurie"], ["together-with", "HenriBecquerel"]],
    }
)


class TestParseCanonical:
    def test_five_ary_fact(self):
        (fact,) = parse_canonical([CURIE_LINE])
        assert fact.m == 3
        assert fact.arity == 5
        assert fact.aux[1] == ("together-with", "PierreCurie")

    @pytest.mark.parametrize("line", ['{"subject":"a","relation":"r","object":"b"}',
                                      '{"subject":"a","relation":"r","object":"b","aux":[]}'])
    def test_binary(self, line):
        (fact,) = parse_canonical([line])
        assert fact.m == 0 and fact.arity == 2

    def test_duplicates_kept(self):
        facts = parse_canonical([CURIE_LINE, CURIE_LINE])
        assert len(facts) == 2 and facts[0] == facts[1]

    @pytest.mark.parametrize(
        "bad",
        ['{"subject":"a","relation":"r"}', '{"subject":"","relation":"r","object":"b"}',
         '{"subject":"a","relation":"r","object":"b","aux":[["x"]]}', "not json", "[1, 2]"],
    )
    def test_errors_carry_line_number(self, bad):
        with pytest.raises(ParseError, match=":2:"):
            parse_canonical(['{"subject":"a","relation":"r","object":"b"}', bad], source="f.jsonl")


class TestConvertJF17K:
    def test_group_membership(self):
        rec = convert_jf17k("music.group_membership", ["Guitar", "DeanFertita", "QueensOfTheStoneAge"])
        assert rec["subject"] == "Guitar"
        assert rec["object"] == "DeanFertita"
        assert rec["relation"] == "music.group_membership"
        assert rec["aux"] == [["music.group_membership#3", "QueensOfTheStoneAge"]]

    def test_two_values(self):
        assert convert_jf17k("r", ["a", "b"])["aux"] == []

    def test_six_values(self):
        rec = convert_jf17k("r", list("abcdef"))
        fact = Fact(rec["subject"], rec["relation"], rec["object"], rec["aux"])
        assert fact.m == 4 and fact.arity == 6
        assert [v for _, v in fact.aux] == list("cdef")

    def test_schema_names(self):
        rec = convert_jf17k("r", ["a", "b", "c"], schema={"r": ["x", "y", "z"]})
        assert rec["aux"] == [["z", "c"]]

    def test_too_few_values(self):
        with pytest.raises(InputError):
            convert_jf17k("r", ["a"])

    def test_parse_lines(self):
        facts = parse_jf17k(["r\ta\tb\tc\n", "\n", "q\tb\tc\n"])
        assert [f.arity for f in facts] == [3, 2]
        with pytest.raises(ParseError, match="^1: "):
            parse_jf17k(["r\ta\n"])


class TestWikiPeople:
    LINES = [
        '{"P166_h": "Q1", "P166_t": "Q2", "P585": ["+1903-01-01T00:00:00Z"], "P1346": ["Q3", "Q4"], "N": 5}',
        '{"P26_h": "Q1", "P26_t": "Q5", "N": 2}',
    ]

    def test_parse(self):
        facts = parse_wikipeople(self.LINES)
        assert facts[0].relation == "P166"
        assert facts[0].aux == (("P585", "+1903-01-01T00:00:00Z"), ("P1346", "Q3"), ("P1346", "Q4"))
        assert facts[1].arity == 2

    def test_filter_literals(self):
        facts = parse_wikipeople(self.LINES, filter_literals=True)
        assert [f.relation for f in facts] == ["P26"]

    def test_missing_primary(self):
        with pytest.raises(ParseError):
            parse_wikipeople(['{"P1": "Q1"}'])


class TestVocabulary:
    def test_single_fact(self):
        v = build_vocab([Fact("s", "r", "o")])
        assert (v.num_entities, v.num_relations, len(v)) == (2, 1, 5)
        assert v.name(0) == "[MASK]" and v.name(1) == "[PAD]"
        assert v.relation_id("r") == 2 and v.entity_id("s") == 3

    def test_first_appearance_order(self, curie):
        v = build_vocab([curie])
        assert v.relations == ["award-received", "point-in-time", "together-with"]
        assert v.entities == ["MarieCurie", "NobelPhysics", "1903", "PierreCurie", "HenriBecquerel"]

    def test_lookup_name_identity(self, curie):
        v = build_vocab([curie, Fact("1903", "point-in-time", "x")])
        for i in range(len(v)):
            assert v.lookup(v.name(i), v.kind(i)) == i

    def test_round_trip(self, curie, tmp_path):
        v = build_vocab([curie, Fact("a b", "r", "ü")])
        v.save(tmp_path / "vocab.txt")
        w = Vocabulary.load(tmp_path / "vocab.txt")
        assert w.dumps() == v.dumps()
        assert w.encode(curie) == v.encode(curie)
        assert v.decode(v.encode(curie)) == curie

    def test_header_like_names_survive(self, tmp_path):
        v = build_vocab([Fact("[relations] 3", "r", "[entities] 0")])
        assert Vocabulary.loads(v.dumps()).entities == v.entities

    def test_empty(self):
        with pytest.raises(InputError):
            build_vocab([])


class TestSplitDev:
    def test_eight_two(self):
        facts = [Fact(f"s{i}", "r", "o") for i in range(10)]
        train, dev = split_dev(facts, 0.2, seed=3)
        assert (len(train), len(dev)) == (8, 2)
        assert set(train).isdisjoint(dev) and set(train) | set(dev) == set(facts)

    def test_deterministic(self):
        facts = [Fact(f"s{i}", "r", "o") for i in range(50)]
        assert split_dev(facts, 0.2, 7) == split_dev(facts, 0.2, 7)

    def test_jf17k_size(self):
        facts = [Fact(f"s{i}", "r", "o") for i in range(76379)]
        train, dev = split_dev(facts, 0.2, 0)
        assert len(dev) == 15276 and len(train) == 76379 - 15276

    def test_errors(self):
        with pytest.raises(InputError):
            split_dev([], 0.2)
        with pytest.raises(ConfigError):
            split_dev([Fact("a", "r", "b")], 1.0)


class TestInstances:
    def test_binary(self):
        insts = generate_instances(Fact("s", "r", "o"))
        assert [i.slot for i in insts] == ["relation", "subject", "object"]
        assert [i.answer for i in insts] == ["r", "s", "o"]

    def test_curie_nine(self, curie):
        insts = generate_instances(curie)
        assert len(insts) == 9
        assert [i.is_entity for i in insts] == [False, True, True, False, True, False, True, False, True]

    def test_corpus_sum(self):
        assert len(instances_for([Fact("a", "r", "b"), Fact("a", "r", "b", (("t", "c"),))])) == 8

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=20))
    def test_recount(self, ms):
        facts = [Fact("s", "r", "o", tuple((f"a{i}", f"v{i}") for i in range(m))) for m in ms]
        insts = instances_for(facts)
        assert len(insts) == sum(2 * m + 3 for m in ms)
        for inst in insts:
            assert sum(1 for v in inst.masked_vertices("[MASK]") if v == "[MASK]") == 1

    def test_attr_mask_follows_record_order(self, curie):
        inst = MaskedInstance(curie, slot_position("value:1", curie.m))
        assert inst.answer == "PierreCurie"
        assert slot_name(inst.position) == "value:1"
        with pytest.raises(InputError):
            slot_position("attr:3", curie.m)


class TestFilterIndex:
    def test_object_and_subject_patterns(self):
        facts = [Fact("a", "r", "b"), Fact("c", "r", "b")]
        index = FilterIndex(facts)
        assert index.answers(MaskedInstance(facts[0], 2)) == {"b"}
        # brute force: every fact agreeing with (?, r, b) outside the subject
        expected = {f.subject for f in facts if (f.relation, f.object) == ("r", "b")}
        assert index.answers(MaskedInstance(facts[0], 1)) == expected == {"a", "c"}

    def test_gold_always_member(self, tiny_dataset):
        index = tiny_dataset.filter_index
        for inst in instances_for(tiny_dataset["test"]):
            assert inst.answer in index.answers(inst)

    def test_aux_order_insensitive(self):
        f1 = Fact("a", "r", "b", (("t", "c"), ("u", "d")))
        f2 = Fact("x", "r", "b", (("u", "d"), ("t", "c")))
        index = build_filter_index([f1], [f2])
        assert index.answers(MaskedInstance(f1, 1)) == {"a", "x"}


class TestPrepare:
    def test_jf17k_without_dev_gets_split(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "train.txt").write_text("".join(f"r{i % 3}\te{i}\te{i + 1}\te{i + 2}\n" for i in range(20)))
        (raw / "test.txt").write_text("r0\te1\te2\n")
        stats = prepare_dataset(raw, "jf17k", tmp_path / "out", seed=0)
        assert (stats["train"], stats["dev"], stats["test"]) == (16, 4, 1)
        assert (stats["arity_min"], stats["arity_max"]) == (2, 3)
        ds = load_dataset(tmp_path / "out")
        assert len(ds["dev"]) == 4

    def test_canonical_passthrough_is_byte_stable(self, tmp_path, curie):
        raw = tmp_path / "raw"
        raw.mkdir()
        for split, facts in {"train": [curie, Fact("a", "r", "b")], "dev": [Fact("b", "r", "a")],
                             "test": [Fact("a", "r", "ü")]}.items():
            write_canonical(raw / f"{split}.jsonl", facts)
        prepare_dataset(raw, "canonical", tmp_path / "once")
        prepare_dataset(tmp_path / "once", "canonical", tmp_path / "twice")
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl"):
            assert (raw / name).read_bytes() == (tmp_path / "once" / name).read_bytes()
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "stats.txt"):
            assert (tmp_path / "once" / name).read_bytes() == (tmp_path / "twice" / name).read_bytes()

    def test_unknown_format(self, tmp_path):
        with pytest.raises(InputError):
            prepare_dataset(tmp_path, "csv", tmp_path / "out")

    def test_stats(self, curie):
        stats = dataset_stats({"train": [curie, Fact("a", "r", "b")], "test": [Fact("a", "r", "c")]})
        assert stats["facts"] == 3 and stats["higher_arity_facts"] == 1
        assert (stats["arity_min"], stats["arity_max"]) == (2, 5)


def test_round_trip_ids_through_files(tmp_path, tiny_dataset):
    named = {k: [tiny_dataset.vocab.decode(f) for f in v] for k, v in tiny_dataset.splits.items()}
    for split, facts in named.items():
        write_canonical(tmp_path / f"{split}.jsonl", facts)
    tiny_dataset.vocab.save(tmp_path / "vocab.txt")
    again = load_dataset(tmp_path)
    assert again.splits == tiny_dataset.splits
    assert np.array_equal(
        [again.vocab.fingerprint()], [tiny_dataset.vocab.fingerprint()]
    )
