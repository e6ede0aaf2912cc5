import math
import random

import pytest

from toolforge.errors import EmptyCandidateSet
from toolforge.patterns import default_catalog
from toolforge.planning import (
    HeuristicScorer,
    TableScorer,
    select_plan,
    sequence_id,
)
from toolforge.tools import ToolSet, default_base_tools


@pytest.fixture(scope="module")
def small_toolset():
    return ToolSet(default_base_tools()[:4])


def brute_force_stagewise(tables, toolset, l_max, shortlist):
    """Independent argmax replay over the same enumerated candidates."""
    import itertools

    best_seq, best_score = None, -math.inf
    for length in range(1, l_max + 1):
        for combo in itertools.product(shortlist, repeat=length):
            cid = sequence_id(combo)
            score = tables.get("sequence", {}).get(cid, 0.0)
            if score > best_score or (score == best_score and cid < best_seq):
                best_seq, best_score = cid, score
    return best_seq


class TestSelectPlan:
    def test_sequential_stage_outputs(self, small_toolset, catalog):
        scorer = HeuristicScorer(small_toolset)
        plan = select_plan("economics trade records", small_toolset, catalog,
                           scorer, l_max=2, shortlist_n=3)
        assert 1 <= len(plan.sequence) <= 2
        assert plan.paradigm in ("SRST", "SRMT", "MRST", "MRMT")
        assert plan.rationale.final_synthesis
        assert len(plan.stage_scores) == 3

    def test_forced_lengths_and_paradigms(self, small_toolset, catalog):
        scorer = HeuristicScorer(small_toolset)
        plan = select_plan("any question", small_toolset, catalog, scorer,
                           paradigms=["MRST"], sequence_lengths=[2],
                           shortlist_n=2)
        assert len(plan.sequence) == 2
        assert plan.paradigm == "MRST"

    def test_empty_toolset_rejected(self, catalog):
        with pytest.raises(EmptyCandidateSet):
            select_plan("q", ToolSet([]), catalog, HeuristicScorer(ToolSet([])))

    def test_empty_catalog_rejected(self, small_toolset):
        with pytest.raises(EmptyCandidateSet):
            select_plan("q", small_toolset, [], HeuristicScorer(small_toolset))

    def test_rationale_steps_cover_sequence(self, small_toolset, catalog):
        scorer = HeuristicScorer(small_toolset)
        plan = select_plan("economics lookup", small_toolset, catalog, scorer,
                           l_max=2, shortlist_n=3)
        assert len(plan.rationale.steps) == len(plan.sequence)


class TestArgmaxSemantics:
    def _random_tables(self, rng, shortlist, l_max):
        import itertools

        table = {}
        for length in range(1, l_max + 1):
            for combo in itertools.product(shortlist, repeat=length):
                table[sequence_id(combo)] = rng.choice(
                    [rng.uniform(-5, 5), rng.choice([0.0, 1.0, 2.0])])
        return {
            "sequence": table,
            "paradigm": {p.paradigm: rng.uniform(0, 1)
                         for p in default_catalog()},
            "rationale": {"rationale_0": rng.uniform(0, 1),
                          "rationale_1": rng.uniform(0, 1)},
        }

    def test_invariance_under_increasing_transforms(self, small_toolset,
                                                    catalog):
        """argmax depends only on score order, not magnitude."""
        rng = random.Random(3)
        transforms = [lambda x: 3 * x + 7, math.exp,
                      lambda x: x ** 3 + 0.5 * x]
        shortlist = sorted(t.id for t in small_toolset)[:3]
        for trial in range(100):
            tables = self._random_tables(rng, shortlist, 2)
            base = select_plan("q", small_toolset, catalog,
                               TableScorer(tables), l_max=2, shortlist_n=3)
            transform = transforms[trial % len(transforms)]
            warped = {
                stage: {cid: transform(v) for cid, v in table.items()}
                for stage, table in tables.items()
            }
            same = select_plan("q", small_toolset, catalog,
                               TableScorer(warped), l_max=2, shortlist_n=3)
            assert same.sequence == base.sequence
            assert same.paradigm == base.paradigm
            assert same.rationale == base.rationale

    def test_lexicographic_tie_breaking(self, small_toolset, catalog):
        rng = random.Random(5)
        shortlist = sorted(t.id for t in small_toolset)[:3]
        for trial in range(100):
            tables = self._random_tables(rng, shortlist, 2)
            plan = select_plan("q", small_toolset, catalog,
                               TableScorer(tables), l_max=2, shortlist_n=3)
            expected = brute_force_stagewise(tables, small_toolset, 2,
                                             shortlist)
            assert sequence_id(plan.sequence) == expected

    def test_all_ties_pick_smallest_id(self, small_toolset, catalog):
        plan = select_plan("q", small_toolset, catalog, TableScorer({}),
                           l_max=1, shortlist_n=3)
        shortlist_best = min(
            cid for cid, _ in plan.stage_scores[0]
        )
        assert sequence_id(plan.sequence) == shortlist_best
