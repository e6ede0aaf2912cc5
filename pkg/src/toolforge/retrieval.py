"""Okapi BM25 corpus index, top-k retrieval, and normalized textual similarity."""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field

from .errors import DuplicateDocId, EmptyCorpus, IndexOutOfRange

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str


@dataclass
class CorpusIndex:
    documents: list[Document]
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    k1: float
    b: float
    _pos_by_id: dict[str, int] = field(default_factory=dict, repr=False)

    def position_of(self, doc_id: str):
        return self._pos_by_id.get(doc_id)


def build_index(documents, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> CorpusIndex:
    docs = list(documents)
    if not docs:
        raise EmptyCorpus("cannot index an empty corpus")
    if not (k1 > 0 and 0 <= b <= 1):
        raise ValueError("k1 must be > 0 and b in [0,1]")
    pos_by_id: dict[str, int] = {}
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths: list[int] = []
    for pos, doc in enumerate(docs):
        if doc.id in pos_by_id:
            raise DuplicateDocId(doc.id)
        pos_by_id[doc.id] = pos
        terms = tokenize(doc.body)
        lengths.append(len(terms))
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        for t, tf in counts.items():
            postings.setdefault(t, []).append((pos, tf))
    avg = sum(lengths) / len(lengths)
    return CorpusIndex(docs, postings, lengths, avg, k1, b, pos_by_id)


def bm25_score(index: CorpusIndex, query_terms, doc_position: int) -> float:
    """Okapi BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)).

    Repeated query terms count once; terms absent from the corpus contribute 0.
    """
    if not 0 <= doc_position < len(index.documents):
        raise IndexOutOfRange(str(doc_position))
    n = len(index.documents)
    dl = index.doc_lengths[doc_position]
    score = 0.0
    for term in sorted(set(query_terms)):
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        tf = 0
        for pos, freq in plist:
            if pos == doc_position:
                tf = freq
                break
        if tf == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
        score += idf * tf * (index.k1 + 1.0) / denom
    return score


def retrieve_top_k(index: CorpusIndex, query_text: str, k: int):
    """Top-k documents by descending score, ties by ascending id; zero scores dropped.

    Scores are accumulated term-by-term over the posting lists, which yields
    the same totals as scoring every document with bm25_score but only visits
    documents that contain at least one query term.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(index.documents)
    k1, b, avg = index.k1, index.b, index.avg_doc_length
    scores: dict[int, float] = {}
    for term in set(tokenize(query_text)):
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for pos, tf in plist:
            denom = tf + k1 * (1.0 - b + b * index.doc_lengths[pos] / avg)
            scores[pos] = scores.get(pos, 0.0) + idf * tf * (k1 + 1.0) / denom
    best = heapq.nsmallest(
        k, ((-(s), index.documents[pos].id, pos)
            for pos, s in scores.items() if s > 0.0))
    return [(index.documents[pos], -neg) for neg, _, pos in best]


def normalized_text_sim(a: str, b: str, k1: float = DEFAULT_K1,
                        b_param: float = DEFAULT_B) -> float:
    """Self-score-normalized BM25 similarity on the {a, b} micro-corpus.

    Ratio of BM25(query=a, doc=b) to BM25(query=b, doc=b), clamped to [0,1].
    A degenerate denominator falls back to token-multiset equality.
    """
    docs = [Document("doc_a", "", a), Document("doc_b", "", b)]
    index = build_index(docs, k1, b_param)
    denom = bm25_score(index, tokenize(b), 1)
    if denom <= 0.0:
        return 1.0 if sorted(tokenize(a)) == sorted(tokenize(b)) else 0.0
    ratio = bm25_score(index, tokenize(a), 1) / denom
    return max(0.0, min(1.0, ratio))


def load_corpus_jsonl(path) -> list[Document]:
    """One document per line: {"id", "title", "text"}."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            docs.append(Document(raw["id"], raw.get("title", ""), raw["text"]))
    return docs
