import pytest

from toolforge.errors import JudgeParseError
from toolforge.mining import atomic_corruptions, corruption_variants
from toolforge.simulator import SimulatorBackend
from toolforge.validation import (
    PRINCIPLES,
    RULE_DIMENSIONS,
    RULE_IDS,
    model_verify,
    normalize_answer,
    parse_assistant_turn,
    render_assistant_turn,
    rule_check,
    validate,
)


class TestParseAssistantTurn:
    def test_think_and_calls(self):
        content = ('<think>reasoning</think>\n<tool_call>\n'
                   '{"name": "t", "arguments": {"query": "x"}}\n</tool_call>')
        parsed = parse_assistant_turn(content)
        assert parsed.think == "reasoning"
        assert parsed.tool_calls[0].name == "t"
        assert parsed.answer is None
        assert parsed.well_formed

    def test_think_and_answer(self):
        parsed = parse_assistant_turn("<think>done</think>\n<answer>42</answer>")
        assert parsed.answer == "42"
        assert parsed.well_formed

    def test_malformed_call_json_flagged(self):
        content = "<think>x</think>\n<tool_call>\n{broken}\n</tool_call>"
        parsed = parse_assistant_turn(content)
        assert parsed.tool_calls[0].malformed

    def test_residue_detected(self):
        parsed = parse_assistant_turn("<think>x</think>\nloose text\n"
                                      "<answer>y</answer>")
        assert not parsed.well_formed
        assert "loose text" in parsed.residue

    def test_render_round_trip(self):
        content = ('<think>r</think>\n<tool_call>\n'
                   '{"arguments": {"query": "x"}, "name": "t"}\n</tool_call>')
        assert render_assistant_turn(parse_assistant_turn(content)) == content


class TestNormalizeAnswer:
    def test_articles_and_punctuation_dropped(self):
        assert normalize_answer("The Seine!") == normalize_answer("a seine")

    def test_whitespace_collapsed(self):
        assert normalize_answer("two   words") == "two words"

    def test_markup_is_stripped_by_tokenization(self):
        assert normalize_answer("seine <the> ") == "seine"


class TestRuleLayer:
    def test_clean_sample_passes_all(self, clean_sample, toolset, catalog):
        report = rule_check(clean_sample, toolset, catalog)
        assert report.passed, report.results

    def test_rule_inventory(self):
        assert RULE_IDS == tuple(f"R{i}" for i in range(1, 10))
        assert set(RULE_DIMENSIONS.values()) == {
            "format_structure", "tool_protocol", "dialogue_correctness",
            "traceability"}

    @pytest.mark.parametrize("corruption",
                             atomic_corruptions(), ids=lambda c: c.id)
    def test_canonical_corruption_flips_only_its_rule(self, corruption,
                                                      clean_sample, toolset,
                                                      catalog):
        """Each canonical corruption produces a one-rule near-miss."""
        corrupted = corruption.apply(clean_sample)
        assert corrupted is not None
        report = rule_check(corrupted, toolset, catalog)
        assert report.failed_rules() == [corruption.target_rule]

    @pytest.mark.parametrize("corruption",
                             corruption_variants(), ids=lambda c: c.id)
    def test_variant_corruptions_target_their_rule(self, corruption,
                                                   clean_sample, toolset,
                                                   catalog):
        corrupted = corruption.apply(clean_sample)
        assert corrupted is not None
        report = rule_check(corrupted, toolset, catalog)
        assert report.failed_rules() == [corruption.target_rule]

    def test_perturbed_patterns_pass(self, sample_factory, toolset, catalog):
        for pattern_id in ("flow_05", "flow_15", "flow_16", "flow_27"):
            sample = sample_factory(pattern_id)
            report = rule_check(sample, toolset, catalog)
            assert report.passed, (pattern_id, report.results)

    def test_report_serializes(self, clean_sample, toolset, catalog):
        record = rule_check(clean_sample, toolset, catalog).to_record()
        assert set(record["rules"]) == set(RULE_IDS)


class TestJudgeLayer:
    def test_all_pass(self, clean_sample):
        verdict = model_verify(clean_sample, SimulatorBackend())
        assert verdict.passed
        assert set(verdict.principles) == set(PRINCIPLES)

    def test_single_fail(self, clean_sample):
        backend = SimulatorBackend(
            judge_verdicts={"logical_soundness": "FAIL"})
        verdict = model_verify(clean_sample, backend)
        assert not verdict.passed
        assert verdict.principles["tool_calling_correctness"] == "pass"
        assert "fail" in verdict.principles["logical_soundness"]

    def test_unparseable_verdict(self, clean_sample):
        backend = SimulatorBackend(
            judge_verdicts={p: "no verdict here, sorry" for p in PRINCIPLES})
        with pytest.raises(JudgeParseError):
            model_verify(clean_sample, backend)


class TestValidate:
    def test_rule_only_mode(self, clean_sample, toolset, catalog):
        report = validate(clean_sample, toolset, catalog=catalog)
        assert report.accepted
        assert report.semantic is None

    def test_full_mode_runs_judges(self, clean_sample, toolset, catalog):
        report = validate(clean_sample, toolset, backend=SimulatorBackend(),
                          mode="full", catalog=catalog)
        assert report.accepted
        assert report.semantic is not None

    def test_full_mode_skips_judges_on_rule_failure(self, clean_sample,
                                                    toolset, catalog):
        corrupted = atomic_corruptions()[0].apply(clean_sample)
        report = validate(corrupted, toolset, backend=SimulatorBackend(),
                          mode="full", catalog=catalog)
        assert not report.accepted
        assert report.semantic is None

    def test_semantic_failure_rejects(self, clean_sample, toolset, catalog):
        backend = SimulatorBackend(
            judge_verdicts={"thought_action_consistency": "FAIL"})
        report = validate(clean_sample, toolset, backend=backend, mode="full",
                          catalog=catalog)
        assert not report.accepted

    def test_report_record_includes_sample_id(self, clean_sample, toolset,
                                              catalog):
        report = validate(clean_sample, toolset, catalog=catalog)
        record = report.to_record(clean_sample.id)
        assert record["sample_id"] == clean_sample.id
        assert record["accepted"] is True
