import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolforge.errors import DuplicateDocId, EmptyCorpus, IndexOutOfRange
from toolforge.retrieval import (
    Document,
    bm25_score,
    build_index,
    normalized_text_sim,
    retrieve_top_k,
    tokenize,
)


def brute_force_bm25(documents, query_terms, doc_position, k1=1.2, b=0.75):
    """Direct formula evaluation, independent of the inverted index."""
    bodies = [tokenize(d.body) for d in documents]
    n = len(documents)
    avgdl = sum(len(ts) for ts in bodies) / n
    dl = len(bodies[doc_position])
    score = 0.0
    for term in set(query_terms):
        df = sum(1 for ts in bodies if term in ts)
        tf = bodies[doc_position].count(term)
        if df == 0 or tf == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    return score


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("The CAT, sat-on 2 mats!") == \
            ["the", "cat", "sat", "on", "2", "mats"]

    def test_empty(self):
        assert tokenize("  ...  ") == []


class TestBm25:
    def test_worked_two_doc_example(self):
        """Single-term query against the smaller of two documents."""
        index = build_index([
            Document("d1", "", "the cat sat"),
            Document("d2", "", "the dog ran far"),
        ])
        assert bm25_score(index, ["cat"], 0) == pytest.approx(0.7362, abs=1e-3)

    def test_repeated_query_terms_count_once(self):
        index = build_index([
            Document("d1", "", "the cat sat"),
            Document("d2", "", "the dog ran far"),
        ])
        once = bm25_score(index, ["cat"], 0)
        thrice = bm25_score(index, ["cat", "cat", "cat"], 0)
        assert once == thrice

    def test_absent_term_scores_zero(self):
        index = build_index([Document("d1", "", "alpha beta")])
        assert bm25_score(index, ["gamma"], 0) == 0.0

    def test_out_of_range_position(self):
        index = build_index([Document("d1", "", "alpha")])
        with pytest.raises(IndexOutOfRange):
            bm25_score(index, ["alpha"], 5)

    def test_random_micro_corpora_match_brute_force(self):
        rng = random.Random(7)
        vocab = [f"w{i}" for i in range(30)]
        for trial in range(200):
            n_docs = rng.randint(1, 10)
            docs = [
                Document(f"d{j}", "",
                         " ".join(rng.choices(vocab, k=rng.randint(1, 30))))
                for j in range(n_docs)
            ]
            index = build_index(docs)
            query = rng.choices(vocab, k=rng.randint(1, 8))
            pos = rng.randrange(n_docs)
            assert bm25_score(index, query, pos) == pytest.approx(
                brute_force_bm25(docs, query, pos), abs=1e-9)


class TestIndexBuild:
    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpus):
            build_index([])

    def test_duplicate_id_rejected(self):
        with pytest.raises(DuplicateDocId):
            build_index([Document("d", "", "a"), Document("d", "", "b")])

    def test_position_lookup(self):
        index = build_index([Document("x", "", "a"), Document("y", "", "b")])
        assert index.position_of("y") == 1
        assert index.position_of("zz") is None


class TestRetrieveTopK:
    @pytest.fixture
    def index(self):
        return build_index([
            Document("a", "", "apples and oranges"),
            Document("b", "", "apples apples apples"),
            Document("c", "", "bananas only here"),
        ])

    def test_descending_scores(self, index):
        ranked = retrieve_top_k(index, "apples", 3)
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_zero_scores_dropped(self, index):
        ranked = retrieve_top_k(index, "apples", 10)
        assert {d.id for d, _ in ranked} == {"a", "b"}

    def test_prefix_property(self, index):
        full = retrieve_top_k(index, "apples oranges bananas", 10)
        assert retrieve_top_k(index, "apples oranges bananas", 2) == full[:2]

    def test_ties_broken_by_ascending_id(self):
        index = build_index([
            Document("z", "", "same words here"),
            Document("a", "", "same words here"),
        ])
        ranked = retrieve_top_k(index, "same words", 2)
        assert [d.id for d, _ in ranked] == ["a", "z"]

    def test_k_must_be_positive(self, index):
        with pytest.raises(ValueError):
            retrieve_top_k(index, "apples", 0)


class TestNormalizedTextSim:
    def test_identical_texts_score_one(self):
        assert normalized_text_sim("green tea leaves", "green tea leaves") == 1.0

    def test_disjoint_texts_score_zero(self):
        assert normalized_text_sim("alpha beta", "gamma delta") == 0.0

    def test_empty_doc_falls_back_to_multiset_equality(self):
        assert normalized_text_sim("", "") == 1.0
        assert normalized_text_sim("something", "") == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from("abcdefg"), max_size=12),
           st.lists(st.sampled_from("abcdefg"), max_size=12))
    def test_bounded_in_unit_interval(self, ws_a, ws_b):
        value = normalized_text_sim(" ".join(ws_a), " ".join(ws_b))
        assert 0.0 <= value <= 1.0

    def test_partial_overlap_strictly_between(self):
        value = normalized_text_sim("red fox jumps", "red fox sleeps quietly")
        assert 0.0 < value < 1.0
