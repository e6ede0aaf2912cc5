import json
import random

import pytest

from conftest import index_for, make_seed
from toolforge.errors import (
    DialogueParseError,
    PlanParseError,
    StructureMismatch,
    SynthesisFailure,
)
from toolforge.generation import (
    SeedTriple,
    SynthesisConfig,
    augment,
    bad_info_positions,
    choose_pattern,
    gold_passage_id,
    offered_tools_for,
    parse_dialogue,
    parse_trace,
    planning_request,
    sample_from_record,
    sample_to_record,
    synthesize,
    wrong_tool_for,
)
from toolforge.patterns import catalog_by_id
from toolforge.planning import HeuristicScorer, select_plan


@pytest.fixture(scope="module")
def seed():
    return make_seed(1, n_gold=4)


@pytest.fixture(scope="module")
def corpus(seed):
    return index_for([seed])


def plan_for(seed, pattern, toolset, catalog):
    return select_plan(seed.question, toolset, catalog,
                       HeuristicScorer(toolset),
                       paradigms=[pattern.paradigm],
                       sequence_lengths=[pattern.total_calls], shortlist_n=3)


def trace_for(seed, pattern, toolset, catalog, backend):
    plan = plan_for(seed, pattern, toolset, catalog)
    request = planning_request(seed, plan, pattern, toolset)
    return parse_trace(backend.chat(request), seed, pattern, toolset)


class TestSeedTriple:
    def test_requires_golden_context(self):
        with pytest.raises(ValueError):
            SeedTriple("s", "q?", "a", ())

    def test_gold_passage_ids_are_stable(self, seed):
        ids = [p["id"] for p in seed.gold_passages()]
        assert ids == [gold_passage_id(seed.id, n) for n in range(4)]


class TestParseTrace:
    def test_missing_block(self, seed, toolset, catalog):
        pattern = catalog_by_id(catalog)["flow_01"]
        with pytest.raises(PlanParseError):
            parse_trace("no block", seed, pattern, toolset)

    def test_unknown_tool(self, seed, toolset, catalog):
        pattern = catalog_by_id(catalog)["flow_01"]
        doc = {"calls": [{"round": 1, "call_slot": 1, "tool": "ghost",
                          "arguments": {"query": "x"},
                          "ref": gold_passage_id(seed.id, 0)}]}
        with pytest.raises(PlanParseError):
            parse_trace(f"<trace>{json.dumps(doc)}</trace>", seed, pattern,
                        toolset)

    def test_structure_mismatch(self, seed, toolset, catalog):
        pattern = catalog_by_id(catalog)["flow_02"]  # needs 2 calls
        doc = {"calls": [{"round": 1, "call_slot": 1,
                          "tool": "history_search",
                          "arguments": {"query": "x"},
                          "ref": gold_passage_id(seed.id, 0)}],
               "unused_refs": [gold_passage_id(seed.id, n) for n in (1, 2, 3)]}
        with pytest.raises(StructureMismatch):
            parse_trace(f"<trace>{json.dumps(doc)}</trace>", seed, pattern,
                        toolset)

    def test_uncovered_gold_rejected(self, seed, toolset, catalog):
        pattern = catalog_by_id(catalog)["flow_01"]
        doc = {"calls": [{"round": 1, "call_slot": 1,
                          "tool": "history_search",
                          "arguments": {"query": "x"},
                          "ref": gold_passage_id(seed.id, 0)}]}
        with pytest.raises(PlanParseError, match="not covered"):
            parse_trace(f"<trace>{json.dumps(doc)}</trace>", seed, pattern,
                        toolset)

    def test_simulator_trace_parses(self, seed, toolset, catalog, backend):
        pattern = catalog_by_id(catalog)["flow_04"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        assert len(trace.calls) == 4
        assert trace.pattern_id == "flow_04"


class TestAugment:
    def test_pair_discipline(self, seed, corpus, toolset, catalog, backend):
        pattern = catalog_by_id(catalog)["flow_03"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        pairs = augment(trace, corpus, 4, seed=seed, pattern=pattern,
                        toolset=toolset)
        assert len(pairs) == len(trace.calls)
        for pair, call in zip(pairs, trace.calls):
            good = {p["id"] for p in pair.good}
            bad = {p["id"] for p in pair.bad}
            assert good >= bad
            assert good - bad == {call.ref}

    def test_bad_excludes_ref_even_if_retrieved(self, seed, corpus, toolset,
                                                catalog, backend):
        pattern = catalog_by_id(catalog)["flow_01"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        pairs = augment(trace, corpus, 5, seed=seed)
        assert trace.calls[0].ref not in {p["id"] for p in pairs[0].bad}

    def test_ref_position_is_run_seeded(self, seed, corpus, toolset, catalog,
                                        backend):
        pattern = catalog_by_id(catalog)["flow_01"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        a = augment(trace, corpus, 5, seed=seed, run_seed=1)
        b = augment(trace, corpus, 5, seed=seed, run_seed=1)
        assert a == b

    def test_invalid_k(self, seed, corpus, toolset, catalog, backend):
        pattern = catalog_by_id(catalog)["flow_01"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        with pytest.raises(ValueError):
            augment(trace, corpus, 0, seed=seed)


class TestPerturbationPlan:
    def test_wrong_tool_differs(self, toolset):
        wrong = wrong_tool_for("history_search", toolset)
        assert wrong.id != "history_search"

    def test_bad_positions_misselection(self, catalog):
        pattern = catalog_by_id(catalog)["flow_05"]  # tool error at (1,1)
        assert bad_info_positions(pattern) == {(1, 1)}

    def test_bad_positions_switch_case_a(self, catalog):
        pattern = catalog_by_id(catalog)["flow_15"]  # switch A at round 2
        assert bad_info_positions(pattern) == {(1, 1)}

    def test_bad_positions_switch_case_b(self, catalog):
        pattern = catalog_by_id(catalog)["flow_16"]  # switch B at round 3
        assert bad_info_positions(pattern) == {(1, 1), (2, 1)}


class TestParseDialogue:
    def test_requires_turn_blocks(self):
        with pytest.raises(DialogueParseError):
            parse_dialogue("nothing structured")

    def test_tool_turn_needs_preceding_call(self):
        body = '<turn role="tool">stray result</turn>'
        with pytest.raises(DialogueParseError):
            parse_dialogue(body)

    def test_final_answer_required(self):
        body = ('<turn role="assistant"><think>t</think>\n<tool_call>\n'
                '{"name": "x", "arguments": {}}\n</tool_call></turn>\n'
                '<turn role="tool">result</turn>')
        with pytest.raises(DialogueParseError):
            parse_dialogue(body)


class TestSynthesize:
    def test_sample_shape(self, clean_sample):
        assert clean_sample.turns[0].role == "system"
        assert clean_sample.turns[1].role == "user"
        assert clean_sample.id.startswith("sample_")
        assert clean_sample.provenance["pipeline_version"]

    def test_offered_tools_cover_used_and_wrong(self, toolset, catalog,
                                                backend, seed, corpus):
        pattern = catalog_by_id(catalog)["flow_05"]
        trace = trace_for(seed, pattern, toolset, catalog, backend)
        offered = offered_tools_for(trace, pattern, toolset, extra=2)
        ids = {t.id for t in offered}
        assert {c.tool_id for c in trace.calls} <= ids
        assert wrong_tool_for(trace.calls[0].tool_id, toolset).id in ids

    def test_choose_pattern_respects_forced_paradigm(self, catalog):
        rng = random.Random(0)
        for trial in range(20):
            cfg = SynthesisConfig(forced_paradigm="MRST",
                                  run_seed=rng.randint(0, 99))
            assert choose_pattern(f"s{trial}", catalog, cfg).paradigm == "MRST"

    def test_choose_pattern_unknown_id(self, catalog):
        with pytest.raises(ValueError):
            choose_pattern("s", catalog, SynthesisConfig(forced_pattern_id="zz"))

    def test_failure_wrapped_with_phase(self, toolset, catalog, seed, corpus):
        class Broken:
            def chat(self, request):
                return "garbage"

        with pytest.raises(SynthesisFailure) as err:
            synthesize(seed, toolset, catalog, corpus, Broken(),
                       SynthesisConfig(forced_pattern_id="flow_01"))
        assert err.value.phase == "planning"

    def test_record_round_trip(self, clean_sample):
        record = sample_to_record(clean_sample)
        json.dumps(record)  # serializable
        restored = sample_from_record(record)
        assert restored.id == clean_sample.id
        assert restored.turns == clean_sample.turns
        assert restored.info_pairs == clean_sample.info_pairs
        assert restored.provenance == clean_sample.provenance

    def test_deterministic_given_config(self, toolset, catalog, backend, seed,
                                        corpus):
        cfg = SynthesisConfig(forced_pattern_id="flow_04")
        a = synthesize(seed, toolset, catalog, corpus, backend, cfg)
        b = synthesize(seed, toolset, catalog, corpus, backend, cfg)
        assert sample_to_record(a) == sample_to_record(b)

    def test_nonce_changes_fingerprints_only(self, toolset, catalog, backend,
                                             seed, corpus):
        a = synthesize(seed, toolset, catalog, corpus, backend,
                       SynthesisConfig(forced_pattern_id="flow_01", nonce=0))
        b = synthesize(seed, toolset, catalog, corpus, backend,
                       SynthesisConfig(forced_pattern_id="flow_01", nonce=1))
        assert a.turns == b.turns
        assert a.provenance["backend_fingerprints"] != \
            b.provenance["backend_fingerprints"]
