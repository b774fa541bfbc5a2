from __future__ import annotations

import json
import math
import random

import pytest

from queryflip.corpus import Bm25Params, ingest_corpus
from queryflip.text import UNK_ID

from conftest import SAMPLE_LINES

# Hand-derived BM25 constants for the sample corpus (k1=1.2, b=0.75).
# All documents have length 3 = avgdl, so the length normalization factor
# is exactly 1 and each matching term contributes
#   idf * 1 * (k1+1) / (1 + k1) = idf.
# idf(df=2) = ln(1 + (3-2+0.5)/(2+0.5)) = ln(1.6)
# idf(df=1) = ln(1 + (3-1+0.5)/(1+0.5)) = ln(8/3)
IDF_DF2 = math.log(1.6)
IDF_DF1 = math.log(8.0 / 3.0)
SCORE_APPLE_RECIPE_D1 = 0.9400072584914713  # 2 * ln(1.6)
SCORE_APPLE_RECIPE_D2 = 0.47000362924573563  # ln(1.6)


def ids(stack, text):
    from queryflip.text import tokenize

    return stack.vocab.encode(tokenize(text))


def test_ingest_sample_corpus(sample_corpus):
    assert sample_corpus.n_docs == 3
    assert sample_corpus.avgdl == 3.0
    assert sample_corpus["d1"].tokens == ("apple", "pie", "recipe")
    assert sample_corpus["d1"].length == 3


def test_ingest_collection_scale_count():
    # a collection-sized stream (the size of the smallest benchmark
    # corpus we target) ingests with an exact document count
    lines = (
        json.dumps({"id": f"doc-{i}", "text": f"passage number {i} text"})
        for i in range(5183)
    )
    corpus = ingest_corpus(lines)
    assert corpus.n_docs == 5183


def test_ingest_missing_field_reports_line():
    lines = [SAMPLE_LINES[0], json.dumps({"id": "dX"})]
    with pytest.raises(ValueError, match=r"missing field: text @ line 2"):
        ingest_corpus(lines)


def test_ingest_malformed_json_reports_line():
    with pytest.raises(ValueError, match=r"malformed record @ line 1"):
        ingest_corpus(["{not json"])


def test_ingest_duplicate_id_named():
    with pytest.raises(ValueError, match=r"duplicate id: d1"):
        ingest_corpus([SAMPLE_LINES[0], SAMPLE_LINES[0]])


def test_bm25_no_matching_terms_scores_zero(sample_stack):
    q = ids(sample_stack, "xylophone")
    assert q == [UNK_ID]
    assert sample_stack.search.bm25_score(q, "d1") == 0.0


def test_bm25_golden_value(sample_stack):
    q = ids(sample_stack, "apple recipe")
    assert sample_stack.search.bm25_score(q, "d1") == pytest.approx(
        SCORE_APPLE_RECIPE_D1, abs=1e-9
    )
    assert sample_stack.search.bm25_score(q, "d2") == pytest.approx(
        SCORE_APPLE_RECIPE_D2, abs=1e-9
    )
    assert sample_stack.search.bm25_score(q, "d3") == pytest.approx(
        SCORE_APPLE_RECIPE_D2, abs=1e-9
    )


def test_bm25_d1_beats_both(sample_stack):
    q = ids(sample_stack, "apple recipe")
    s = sample_stack.search
    assert s.bm25_score(q, "d1") > s.bm25_score(q, "d2")
    assert s.bm25_score(q, "d1") > s.bm25_score(q, "d3")


def test_search_order_with_tie_break(sample_stack):
    # d2 and d3 tie exactly (one df=2 term each); ascending doc id wins.
    q = ids(sample_stack, "apple recipe")
    ranking = sample_stack.search.search(q, 3)
    assert ranking.doc_ids() == ["d1", "d2", "d3"]


def test_search_k1_returns_top_only(sample_stack):
    q = ids(sample_stack, "apple recipe")
    ranking = sample_stack.search.search(q, 1)
    assert ranking.doc_ids() == ["d1"]


def test_search_k_larger_than_corpus_truncates(sample_stack):
    q = ids(sample_stack, "banana")
    ranking = sample_stack.search.search(q, 10)
    assert len(ranking.entries) == 3
    assert ranking.doc_ids()[0] == "d3"
    # zero-score documents are appended in ascending id order
    assert ranking.doc_ids()[1:] == ["d1", "d2"]
    assert ranking.entries[1][1] == 0.0


def test_search_scores_match_fresh_recomputation(sample_stack):
    q = ids(sample_stack, "apple banana recipe")
    ranking = sample_stack.search.search(q, 3)
    for doc_id, score in ranking.entries:
        assert score == sample_stack.search.bm25_score(q, doc_id)


def test_search_prefix_consistency(sample_stack):
    rng = random.Random(5)
    terms = ["apple", "recipe", "banana", "tree", "orchard", "pie", "bread"]
    for _ in range(25):
        q = ids(sample_stack, " ".join(rng.choices(terms, k=rng.randint(1, 4))))
        for k in (1, 2):
            shorter = sample_stack.search.search(q, k)
            longer = sample_stack.search.search(q, k + 1)
            assert shorter.entries == longer.entries[:k]


def test_query_representation_identity_and_disjoint(sample_stack):
    s = sample_stack.search
    q = ids(sample_stack, "apple recipe")
    u = s.query_representation(q)
    v = s.query_representation(q)
    assert u == v
    assert sum(w * w for w in u.values()) == pytest.approx(1.0, abs=1e-12)
    disjoint = s.query_representation(ids(sample_stack, "tree bread"))
    assert set(u) & set(disjoint) == set()


def test_query_representation_hand_cosine(sample_stack):
    # q = "apple recipe" (both idf ln 1.6), q' = "apple orchard"
    # cos = ln(1.6)^2 / (sqrt(2)*ln(1.6) * sqrt(ln(1.6)^2 + ln(8/3)^2))
    s = sample_stack.search
    u = s.query_representation(ids(sample_stack, "apple recipe"))
    v = s.query_representation(ids(sample_stack, "apple orchard"))
    dot = sum(w * v[t] for t, w in u.items() if t in v)
    expected = (IDF_DF2 * IDF_DF2) / (
        math.sqrt(2.0) * IDF_DF2 * math.hypot(IDF_DF2, IDF_DF1)
    )
    assert dot == pytest.approx(expected, abs=1e-9)
    assert dot == pytest.approx(0.3055672420050612, abs=1e-9)


def test_query_representation_all_unk_is_zero_vector(sample_stack):
    assert sample_stack.search.query_representation([UNK_ID, UNK_ID]) == {}


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        Bm25Params(k1=0.0)
    with pytest.raises(ValueError):
        Bm25Params(b=1.5)


def test_search_rejects_bad_k(sample_stack):
    with pytest.raises(ValueError):
        sample_stack.search.search([3], 0)
