"""Sequential plan selection: tool sequence, paradigm, then reasoning rationale.

Each stage is an exhaustive argmax over an enumerated candidate set with
lexicographic tie-breaking on candidate id, so selection is reproducible and
invariant under strictly increasing score transforms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import EmptyCandidateSet
from .patterns import PARADIGMS
from .retrieval import Document, build_index, retrieve_top_k, normalized_text_sim

DEFAULT_L_MAX = 4
DEFAULT_SHORTLIST = 6


@dataclass(frozen=True)
class ReasoningRationale:
    steps: tuple[str, ...]
    final_synthesis: str

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))


@dataclass(frozen=True)
class PlanSelection:
    sequence: tuple[str, ...]
    paradigm: str
    rationale: ReasoningRationale
    stage_scores: tuple[tuple[tuple[str, float], ...], ...]


class TableScorer:
    """Score table keyed by (stage, candidate id); for tests and replay."""

    def __init__(self, tables: dict[str, dict[str, float]], default: float = 0.0):
        self.tables = tables
        self.default = default

    def score(self, stage: str, candidate_id: str, context: dict) -> float:
        return self.tables.get(stage, {}).get(candidate_id, self.default)


class HeuristicScorer:
    """Deterministic lexical scorer used by the mock pipeline.

    Sequences are scored by mean question/description BM25 self-similarity;
    paradigms follow a simple-first prior; rationales prefer the first wording.
    """

    _PARADIGM_PRIOR = {"SRST": 0.4, "SRMT": 0.3, "MRST": 0.2, "MRMT": 0.1}

    def __init__(self, toolset):
        self._desc = {t.id: t.description for t in toolset}
        self._sim_cache: dict[tuple[str, str], float] = {}

    def _sim(self, question: str, tool_id: str) -> float:
        key = (question, tool_id)
        if key not in self._sim_cache:
            self._sim_cache[key] = normalized_text_sim(
                question, self._desc.get(tool_id, tool_id)
            )
        return self._sim_cache[key]

    def score(self, stage: str, candidate_id: str, context: dict) -> float:
        if stage == "sequence":
            ids = candidate_id.split(",")
            question = context["question"]
            sims = [self._sim(question, tid) for tid in ids]
            return sum(sims) / len(sims) - 0.01 * len(ids)
        if stage == "paradigm":
            return self._PARADIGM_PRIOR[candidate_id]
        return 1.0 - 0.1 * int(candidate_id.rsplit("_", 1)[1])


def sequence_id(sequence) -> str:
    return ",".join(sequence)


def _shortlist_tools(question: str, toolset, n: int) -> list[str]:
    docs = [Document(t.id, t.name, t.description) for t in toolset]
    index = build_index(docs)
    ranked = [doc.id for doc, _ in retrieve_top_k(index, question, n)]
    if len(ranked) < n:
        for t in sorted(toolset, key=lambda t: t.id):
            if t.id not in ranked:
                ranked.append(t.id)
            if len(ranked) >= n:
                break
    return ranked[:n]


def rationale_candidates(sequence, question: str) -> list[tuple[str, ReasoningRationale]]:
    base_steps = tuple(
        f"call {tool_id} to resolve sub-question {i + 1} of: {question}"
        for i, tool_id in enumerate(sequence)
    )
    alt_steps = tuple(
        f"gather evidence with {tool_id} for hop {i + 1}"
        for i, tool_id in enumerate(sequence)
    )
    return [
        ("rationale_0", ReasoningRationale(base_steps,
                                           "aggregate all retrieved evidence into the final answer")),
        ("rationale_1", ReasoningRationale(alt_steps,
                                           "synthesize the hops into one conclusion")),
    ]


def _argmax(scored):
    """Max score, ties broken by ascending candidate id."""
    best = None
    for cid, score, payload in scored:
        if best is None or score > best[1] or (score == best[1] and cid < best[0]):
            best = (cid, score, payload)
    return best


def select_plan(question: str, toolset, catalog, scorer, *,
                l_max: int = DEFAULT_L_MAX, shortlist_n: int = DEFAULT_SHORTLIST,
                paradigms=None, sequence_lengths=None) -> PlanSelection:
    """Three-stage sequential argmax over sequences, paradigms, and rationales."""
    if not len(toolset) or not catalog:
        raise EmptyCandidateSet("toolset and catalog must be non-empty")
    shortlist = _shortlist_tools(question, toolset, shortlist_n)
    if not shortlist:
        raise EmptyCandidateSet("no candidate tools")
    lengths = sequence_lengths or range(1, l_max + 1)

    seq_scored = []
    for length in lengths:
        for combo in itertools.product(shortlist, repeat=length):
            cid = sequence_id(combo)
            ctx = {"stage": "sequence", "question": question}
            seq_scored.append((cid, scorer.score("sequence", cid, ctx), combo))
    if not seq_scored:
        raise EmptyCandidateSet("no candidate sequences")
    seq_id, _, sequence = _argmax(seq_scored)

    para_candidates = list(paradigms or PARADIGMS)
    para_scored = []
    for paradigm in para_candidates:
        ctx = {"stage": "paradigm", "question": question, "sequence": sequence}
        para_scored.append((paradigm, scorer.score("paradigm", paradigm, ctx), paradigm))
    if not para_scored:
        raise EmptyCandidateSet("no candidate paradigms")
    paradigm, _, _ = _argmax(para_scored)

    rat_scored = []
    for cid, rationale in rationale_candidates(sequence, question):
        ctx = {"stage": "rationale", "question": question,
               "sequence": sequence, "paradigm": paradigm}
        rat_scored.append((cid, scorer.score("rationale", cid, ctx), rationale))
    _, _, rationale = _argmax(rat_scored)

    return PlanSelection(
        sequence=tuple(sequence),
        paradigm=paradigm,
        rationale=rationale,
        stage_scores=(
            tuple((cid, s) for cid, s, _ in seq_scored),
            tuple((cid, s) for cid, s, _ in para_scored),
            tuple((cid, s) for cid, s, _ in rat_scored),
        ),
    )
