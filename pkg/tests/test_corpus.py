"""Corpus loading, tokenization, passage windows, and tf-idf term selection."""

import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trieval.corpus import (
    CorpusStats,
    Document,
    load_corpus,
    segment_passages,
    select_key_terms,
    tokenize,
)
from trieval.errors import CorpusError


class TestTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert tokenize("The QUICK, brown-fox!") == ["the", "quick", "brown", "fox"]

    def test_underscores_and_digits(self):
        assert tokenize("Albert_Einstein COVID-19") == ["albert", "einstein", "covid", "19"]

    def test_empty_and_whitespace(self):
        assert tokenize("") == []
        assert tokenize("   \t\n ") == []

    @given(st.text(max_size=200))
    def test_tokens_are_lowercase_and_nonempty(self, text):
        for tok in tokenize(text):
            assert tok
            assert tok == tok.lower()

    @given(st.text(max_size=200))
    def test_idempotent_over_own_output(self, text):
        joined = " ".join(tokenize(text))
        assert tokenize(joined) == tokenize(text)


class TestLoadCorpus:
    def test_loads_documents_and_counts(self, corpus_file_writer):
        path = corpus_file_writer(
            [
                {"doc_key": "a", "url": "https://x.org/a", "title": "alpha", "body": "one two"},
                {"doc_key": "b", "url": "https://x.org/b", "title": "beta", "body": "two three"},
            ]
        )
        corpus = load_corpus(path)
        assert len(corpus) == 2
        assert corpus.stats.doc_count == 2
        assert corpus.stats.doc_frequency == {"one": 1, "two": 2, "three": 1}
        assert corpus.index_of("b") == 1
        assert corpus.get("a").title == "alpha"

    def test_malformed_line_skipped_with_count(self, tmp_path, caplog):
        path = tmp_path / "corpus.jsonl"
        good = json.dumps({"doc_key": "a", "url": "", "title": "t", "body": "hello world"})
        path.write_text(good + "\nnot json at all\n", encoding="utf-8")
        with caplog.at_level("WARNING"):
            corpus = load_corpus(path)
        assert len(corpus) == 1
        assert corpus.skipped == 1
        assert any(":2: malformed record" in r.getMessage() for r in caplog.records)

    def test_empty_body_skipped(self, corpus_file_writer):
        path = corpus_file_writer(
            [
                {"doc_key": "a", "url": "u", "title": "t", "body": "..."},
                {"doc_key": "b", "url": "u", "title": "t", "body": "real words"},
            ]
        )
        corpus = load_corpus(path)
        assert [d.doc_key for d in corpus.documents] == ["b"]
        assert corpus.skipped == 1

    def test_duplicate_doc_key_fatal(self, corpus_file_writer):
        path = corpus_file_writer(
            [
                {"doc_key": "a", "url": "", "title": "", "body": "x y"},
                {"doc_key": "a", "url": "", "title": "", "body": "z w"},
            ]
        )
        with pytest.raises(CorpusError, match="duplicate doc_key 'a'"):
            load_corpus(path)

    def test_zero_valid_documents_fatal(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("garbage\n{bad\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            load_corpus(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(OSError):
            load_corpus(tmp_path / "absent.jsonl")


class TestSegmentPassages:
    def test_exact_windows(self):
        doc = Document("d", "", "", " ".join(str(i) for i in range(130)))
        windows = segment_passages(doc, 64)
        assert [len(w) for w in windows] == [64, 64, 2]
        assert windows[0][0] == "0"
        assert windows[2] == ["128", "129"]

    def test_short_document_single_window(self):
        doc = Document("d", "", "", "just three words")
        assert segment_passages(doc, 64) == [["just", "three", "words"]]

    def test_invalid_window_size(self):
        doc = Document("d", "", "", "a b")
        with pytest.raises(ValueError):
            segment_passages(doc, 0)

    @given(st.integers(min_value=1, max_value=20), st.integers(min_value=1, max_value=100))
    def test_windows_reassemble_document(self, s, n_words):
        body = " ".join(f"w{i}" for i in range(n_words))
        doc = Document("d", "", "", body)
        windows = segment_passages(doc, s)
        flat = [tok for w in windows for tok in w]
        assert flat == tokenize(body)
        assert all(len(w) <= s for w in windows)


class TestSelectKeyTerms:
    def test_highest_tfidf_first(self):
        # "rare" appears in 1 of 10 docs, "common" in all 10
        stats = CorpusStats(doc_count=10, doc_frequency={"rare": 1, "common": 10, "mid": 5})
        doc = Document("d", "", "", "rare common mid rare")
        terms = select_key_terms(doc, stats, 2)
        assert terms == ["rare", "mid"]

    def test_tie_broken_alphabetically(self):
        stats = CorpusStats(doc_count=4, doc_frequency={"b": 2, "a": 2})
        doc = Document("d", "", "", "b a")
        assert select_key_terms(doc, stats, 2) == ["a", "b"]

    def test_fewer_terms_than_requested(self):
        stats = CorpusStats(doc_count=2, doc_frequency={"x": 1})
        doc = Document("d", "", "", "x x x")
        assert select_key_terms(doc, stats, 10) == ["x"]

    def test_unsmoothed_idf(self):
        stats = CorpusStats(doc_count=8, doc_frequency={"q": 2})
        assert stats.idf("q") == math.log(8 / 2)
        assert stats.idf("unseen") == 0.0
