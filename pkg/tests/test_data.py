"""Data pipeline tests: preprocessing rules, vocabulary determinism,
ingestion edge cases, embedding loading, folds, and batch schedules."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsplit.data import (
    FoldPlan,
    Vocabulary,
    batch_schedule,
    ingest_clickbait_challenge,
    load_embeddings,
    load_party_corpus,
    make_folds,
    pad_batch,
    preprocess,
)
from fedsplit.errors import DataError, FormatError


class TestPreprocess:
    def test_rule_application(self):
        assert preprocess("The Cat, the HAT!") == ["cat", "hat"]

    def test_empty_string(self):
        assert preprocess("") == []

    def test_strips_nonprintable(self):
        # removing the illegal codepoint rejoins the token
        assert preprocess("ca\x00t") == ["cat"]

    def test_truncation_never_reorders(self):
        tokens = preprocess("alpha beta gamma delta", max_len=2)
        assert tokens == ["alpha", "beta"]

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF),
                   max_size=80))
    def test_idempotent(self, text):
        once = preprocess(text, max_len=16)
        again = preprocess(" ".join(once), max_len=16)
        assert once == again


class TestVocabulary:
    def test_order_is_frequency_then_lexicographic(self):
        v = Vocabulary.build([["b", "a", "a"], ["c", "b"]])
        assert v.index == {"a": 2, "b": 3, "c": 4}

    def test_min_frequency_threshold(self):
        v = Vocabulary.build([["a", "a", "b"]], min_freq=2)
        assert "b" not in v.index
        assert v.to_ids(["a", "b"]) == [2, 1]  # unknown -> 1

    def test_words_roundtrip(self):
        v = Vocabulary.build([["z", "y", "z"]])
        assert v.words == ["z", "y"]
        assert v.to_ids(v.words) == [2, 3]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


class TestIngest:
    def make_inputs(self, tmp_path, instances, truth):
        ip, tp = tmp_path / "inst.jsonl", tmp_path / "truth.jsonl"
        write_jsonl(ip, instances)
        write_jsonl(tp, truth)
        return ip, tp, tmp_path / "a.jsonl", tmp_path / "b.jsonl"

    def test_label_mapping(self, tmp_path):
        ip, tp, oa, ob = self.make_inputs(
            tmp_path,
            [{"id": "1", "targetTitle": "t1", "targetDescription": "d1"},
             {"id": "2", "targetTitle": "t2", "targetDescription": "d2"}],
            [{"id": "1", "truthClass": "clickbait"},
             {"id": "2", "truthClass": "no-clickbait"}])
        stats = ingest_clickbait_challenge(ip, tp, oa, ob)
        assert stats["written"] == 2
        rows = [json.loads(l) for l in open(oa)]
        assert {r["id"]: r["label"] for r in rows} == {"1": 1, "2": 0}
        rows_b = [json.loads(l) for l in open(ob)]
        assert all(set(r) == {"id", "content"} for r in rows_b)

    def test_empty_description_dropped_and_counted(self, tmp_path):
        ip, tp, oa, ob = self.make_inputs(
            tmp_path,
            [{"id": "1", "targetTitle": "t", "targetDescription": "  "}],
            [{"id": "1", "truthClass": "clickbait"}])
        stats = ingest_clickbait_challenge(ip, tp, oa, ob)
        assert stats == {"written": 0, "skipped": 0, "empty_content": 1}

    def test_duplicate_id_is_an_error(self, tmp_path):
        ip, tp, oa, ob = self.make_inputs(
            tmp_path,
            [{"id": "1", "targetTitle": "t", "targetDescription": "d"},
             {"id": "1", "targetTitle": "t", "targetDescription": "d"}],
            [{"id": "1", "truthClass": "clickbait"}])
        with pytest.raises(DataError, match="duplicate"):
            ingest_clickbait_challenge(ip, tp, oa, ob)

    def test_missing_truth_is_an_error(self, tmp_path):
        ip, tp, oa, ob = self.make_inputs(
            tmp_path,
            [{"id": "1", "targetTitle": "t", "targetDescription": "d"}],
            [{"id": "2", "truthClass": "clickbait"}])
        with pytest.raises(DataError, match="missing"):
            ingest_clickbait_challenge(ip, tp, oa, ob)

    def test_malformed_lines_over_budget_fail(self, tmp_path):
        instances = [{"id": str(i), "targetTitle": "t", "targetDescription": "d"}
                     for i in range(10)]
        ip, tp, oa, ob = self.make_inputs(
            tmp_path, instances,
            [{"id": str(i), "truthClass": "clickbait"} for i in range(10)])
        with open(ip, "a") as f:
            f.write("this is not json\n")
        with pytest.raises(DataError, match="1%"):
            ingest_clickbait_challenge(ip, tp, oa, ob)

    def test_paragraphs_switch(self, tmp_path):
        ip, tp, oa, ob = self.make_inputs(
            tmp_path,
            [{"id": "1", "targetTitle": "t", "targetDescription": "",
              "targetParagraphs": ["first part", "second part"]}],
            [{"id": "1", "truthClass": "no-clickbait"}])
        stats = ingest_clickbait_challenge(ip, tp, oa, ob, use_paragraphs=True)
        assert stats["written"] == 1
        assert json.loads(open(ob).readline())["content"] == "first part second part"


class TestCorpusLoading:
    def test_empty_after_preprocess_dropped_and_counted(self, tmp_path):
        path = tmp_path / "a.jsonl"
        write_jsonl(path, [{"id": "1", "title": "the a of", "label": 1},
                           {"id": "2", "title": "real words here", "label": 0}])
        corpus = load_party_corpus(path, "title", 30, with_labels=True)
        assert corpus.dropped == 1
        assert list(corpus.records) == ["2"]

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "a.jsonl"
        write_jsonl(path, [{"id": "1", "title": "one two", "label": 1},
                           {"id": "1", "title": "three four", "label": 0}])
        with pytest.raises(DataError, match="duplicate"):
            load_party_corpus(path, "title", 30, with_labels=True)


class TestEmbeddings:
    def write_glove(self, path, entries, dim=4):
        with open(path, "w", encoding="utf-8") as f:
            for word, vec in entries:
                f.write(word + " " + " ".join(str(v) for v in vec) + "\n")

    def test_absent_word_gets_zero_row(self, tmp_path):
        vocab = Vocabulary.build([["hit", "miss"]])
        path = tmp_path / "glove.txt"
        self.write_glove(path, [("hit", [1, 2, 3, 4])])
        table, rate = load_embeddings(path, vocab, dim=4)
        assert np.array_equal(table.matrix.data[vocab.index["miss"]], np.zeros(4))
        assert np.array_equal(table.matrix.data[vocab.index["hit"]], [1, 2, 3, 4])

    def test_wrong_dimension_names_the_line(self, tmp_path):
        vocab = Vocabulary.build([["a"]])
        path = tmp_path / "glove.txt"
        with open(path, "w") as f:
            f.write("a 1 2 3 4\n")
            f.write("b 1 2 3\n")
        with pytest.raises(FormatError, match=":2"):
            load_embeddings(path, vocab, dim=4)

    def test_hit_rate_counting(self, tmp_path):
        words = [f"w{i}" for i in range(10)]
        vocab = Vocabulary.build([words])
        path = tmp_path / "glove.txt"
        self.write_glove(path, [(w, [1, 1, 1, 1]) for w in words[:7]])
        _, rate = load_embeddings(path, vocab, dim=4)
        assert rate == pytest.approx(0.7)


class TestFolds:
    def test_balanced_small_case(self):
        pairs = [(f"p{i}", 1) for i in range(5)] + [(f"n{i}", 0) for i in range(5)]
        plan = make_folds(pairs, k=5, seed=3)
        for fold in plan.folds:
            labels = [1 if rid.startswith("p") else 0 for rid in fold]
            assert sorted(labels) == [0, 1]

    def test_same_seed_identical_plan_bytes(self):
        pairs = [(f"id{i}", i % 2) for i in range(40)]
        a = make_folds(pairs, k=5, seed=9).canonical_bytes()
        b = make_folds(pairs, k=5, seed=9).canonical_bytes()
        assert a == b

    def test_folds_partition_the_corpus(self):
        pairs = [(f"id{i}", i % 2) for i in range(23)]
        plan = make_folds(pairs, k=5, seed=1)
        seen = [rid for fold in plan.folds for rid in fold]
        assert sorted(seen) == sorted(rid for rid, _ in pairs)

    def test_ratio_within_one_percent_at_corpus_scale(self):
        # sizes mirror the full challenge corpus: 19538 samples, 4761 positive
        n, pos = 19538, 4761
        pairs = [(f"id{i:05d}", 1 if i < pos else 0) for i in range(n)]
        plan = make_folds(pairs, k=5, seed=11)
        global_ratio = pos / n
        for fold in plan.folds:
            labels = [1 if int(rid[2:]) < pos else 0 for rid in fold]
            assert abs(sum(labels) / len(labels) - global_ratio) < 0.01

    def test_too_few_members_rejected(self):
        with pytest.raises(DataError):
            make_folds([("a", 0), ("b", 1)], k=5, seed=0)

    def test_train_val_split(self):
        pairs = [(f"id{i}", i % 2) for i in range(20)]
        plan = make_folds(pairs, k=5, seed=2)
        train, val = plan.train_ids(0), plan.val_ids(0)
        assert sorted(train + val) == sorted(rid for rid, _ in pairs)
        assert not set(train) & set(val)


class TestBatchSchedule:
    def test_both_parties_agree(self):
        ids = [f"s{i}" for i in range(17)]
        a = batch_schedule(list(reversed(ids)), epoch=2, shared_seed=77, batch_size=4)
        b = batch_schedule(sorted(ids), epoch=2, shared_seed=77, batch_size=4)
        assert a == b

    def test_epochs_differ(self):
        ids = [f"s{i}" for i in range(16)]
        e0 = [x for b in batch_schedule(ids, 0, 5, 4) for x in b]
        e1 = [x for b in batch_schedule(ids, 1, 5, 4) for x in b]
        assert sum(x != y for x, y in zip(e0, e1)) >= 2

    def test_oversized_batch_is_single_shuffled_batch(self):
        ids = [f"s{i}" for i in range(5)]
        batches = batch_schedule(ids, 0, 5, batch_size=100)
        assert len(batches) == 1
        assert sorted(batches[0]) == sorted(ids)

    def test_last_batch_smaller(self):
        batches = batch_schedule([f"s{i}" for i in range(10)], 0, 5, 4)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            batch_schedule([], 0, 5, 4)


class TestPadBatch:
    def test_pads_to_longest(self):
        batch = pad_batch([[2, 3], [4]], labels=[1, 0])
        assert batch.ids.shape == (2, 2)
        assert batch.ids[1, 1] == 0
        assert list(batch.lengths) == [2, 1]
        assert list(batch.labels) == [1, 0]

    def test_empty_list_rejected(self):
        with pytest.raises(DataError):
            pad_batch([[2], []])
