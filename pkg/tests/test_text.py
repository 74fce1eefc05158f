import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egcnn.errors import ContractError, LabelError
from egcnn.text import (PAD, UNK, CharVocab, ReviewRecord, Vocab, build_vocab, encode_review,
                        ingest_reviews, split_dataset, split_indices, tokenize)


@pytest.mark.parametrize("text,tokens", [
    ("Great battery life!", ["great", "battery", "life"]),
    ("", []),
    ("Wi-Fi 5GHz", ["wi", "fi", "5ghz"]),
    ("  --  ", []),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


@settings(max_examples=50, deadline=None)
@given(st.text())
def test_tokenize_deterministic_and_clean(text):
    toks = tokenize(text)
    assert toks == tokenize(text)
    assert all(t and t.isalnum() and t == t.lower() for t in toks)


class TestVocab:
    def test_min_count(self):
        corpus = [["a", "a", "b"], ["a"]]
        v = build_vocab(corpus, min_count=2)
        assert "a" in v and "b" not in v
        assert {"a", "b"} <= set(build_vocab(corpus, min_count=1).itos)

    def test_reserved_ids(self):
        v = build_vocab([["x"]], 1)
        assert v.id("<pad>") == PAD and v.id("never-seen") == UNK

    def test_ties_ordered_lexicographically(self):
        v1 = build_vocab([["zeta", "alpha", "mid"], ["mid"]], 1)
        v2 = build_vocab([["alpha", "zeta"], ["mid", "mid"]], 1)
        assert v1.itos == v2.itos == ["<pad>", "<unk>", "mid", "alpha", "zeta"]
        assert v1.digest() == v2.digest()

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ContractError):
            Vocab(["a", "a"])


class TestEncode:
    def setup_method(self):
        self.vocab = build_vocab([["good", "watch", "strap"]], 1)
        self.chars = CharVocab.from_tokens([["good", "watch", "strap"]])

    def test_padding(self):
        e = encode_review(ReviewRecord("good watch strap", 1, 2, "w"), self.vocab, self.chars, m=100, max_chars=4)
        assert (e.word_ids[:3] != PAD).all() and (e.word_ids[3:] == PAD).all()
        assert e.word_ids.shape == (100,) and e.char_ids.shape == (100, 4)

    def test_truncation(self):
        text = " ".join(["good"] * 149 + ["watch"])
        e = encode_review(ReviewRecord(text, 1, 2, "w"), self.vocab, self.chars, m=100, max_chars=4)
        assert (e.word_ids == self.vocab.id("good")).all()

    def test_oov_keeps_characters(self):
        e = encode_review(ReviewRecord("dog", 1, 2, "w"), self.vocab, self.chars, m=3, max_chars=4)
        assert e.word_ids[0] == UNK
        assert e.char_ids[0].tolist() == [self.chars.id("d"), self.chars.id("o"), self.chars.id("g"), PAD]

    def test_target(self):
        e = encode_review(ReviewRecord("good", 7, 10, "w"), self.vocab, self.chars, m=5, max_chars=4)
        assert e.target == 0.7

    def test_zero_votes_rejected(self):
        with pytest.raises(LabelError):
            encode_review(ReviewRecord("good", 0, 0, "w"), self.vocab, self.chars, m=5, max_chars=4)

    def test_bad_lengths(self):
        with pytest.raises(ContractError):
            encode_review(ReviewRecord("good", 1, 2, "w"), self.vocab, self.chars, m=0, max_chars=4)


def _write(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(r if isinstance(r, str) else json.dumps(r))
            fh.write("\n")


class TestIngest:
    def test_vote_filter(self, tmp_path):
        p = tmp_path / "w.json"
        _write(p, [
            {"reviewText": "fine", "helpful": [3, 5]},
            {"reviewText": "great", "helpful": [7, 10]},
            {"reviewText": "six votes", "helpful": [0, 6]},
        ])
        recs, stats = ingest_reviews(p, "watches", min_votes=5)
        assert [r.text for r in recs] == ["great", "six votes"]
        assert recs[0].target == 0.7
        assert stats["total"] == 3 and stats["kept"] == 2

    def test_bad_lines_skipped_with_warning(self, tmp_path, caplog):
        p = tmp_path / "w.json"
        _write(p, [
            "{not json",
            {"helpful": [1, 9]},
            {"reviewText": "x", "helpful": [9, 8]},
            {"reviewText": "ok", "helpful": [6, 8]},
        ])
        with caplog.at_level(logging.WARNING):
            recs, stats = ingest_reviews(p, "w", min_votes=5)
        assert len(recs) == 1 and stats["skipped"] == 3
        assert len([r for r in caplog.records if r.levelno == logging.WARNING]) == 3

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text("")
        recs, stats = ingest_reviews(p, "w")
        assert recs == [] and stats.get("kept") == 0


def _records(n, domain="d"):
    return [ReviewRecord(f"review number {i} word{i % 3}", i % 7, 7, domain) for i in range(n)]


class TestSplit:
    def test_counts(self):
        ds = split_dataset(_records(10), (0.8, 0.1, 0.1), seed=0, m=8, max_chars=4, min_count=1)
        assert [ds.size(s) for s in ("train", "dev", "test")] == [8, 1, 1]

    def test_same_seed_same_split(self):
        a = split_indices(np.zeros(50, int), seed=4)
        b = split_indices(np.zeros(50, int), seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_seeds_differ(self):
        parts = {tuple(split_indices(np.zeros(50, int), seed=s)[1]) for s in range(100)}
        assert len(parts) > 90

    def test_every_row_assigned_once(self):
        doms = np.repeat([0, 1, 2], [13, 7, 30])
        parts = split_indices(doms, seed=1)
        allrows = np.sort(np.concatenate(parts))
        assert np.array_equal(allrows, np.arange(50))
        for k, n in ((0, 13), (1, 7), (2, 30)):
            # each domain is split on its own
            assert sum(np.isin(p, np.flatnonzero(doms == k)).sum() for p in parts) == n

    def test_tiny_domain_goes_to_train(self, caplog):
        doms = np.array([0] * 20 + [1, 1])
        with caplog.at_level(logging.WARNING):
            parts = split_indices(doms, seed=0)
        assert {20, 21} <= set(parts[0].tolist())
        assert any("all assigned to train" in r.message for r in caplog.records)

    def test_bad_ratios(self):
        with pytest.raises(ContractError):
            split_indices(np.zeros(5, int), (0.5, 0.6, -0.1))

    def test_vocab_from_train_only(self):
        recs = _records(10) + [ReviewRecord("zzzonly", 1, 6, "d")]
        ds = split_dataset(recs, seed=0, m=8, max_chars=4, min_count=1)
        in_train = "zzzonly" in {ds.vocab.token(int(i)) for i in ds.split("train")["word_ids"].ravel()}
        assert ("zzzonly" in ds.vocab) == in_train

    def test_records_without_votes_dropped(self):
        ds = split_dataset(_records(10) + [ReviewRecord("none", 0, 0, "d")], seed=0, m=8,
                           max_chars=4, min_count=1)
        assert sum(ds.size(s) for s in ("train", "dev", "test")) == 10
