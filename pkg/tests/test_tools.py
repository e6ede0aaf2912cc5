import math
import random

import pytest

from toolforge.errors import Exhausted, ParseError
from toolforge.retrieval import normalized_text_sim
from toolforge.simulator import SimulatorBackend
from toolforge.tools import (
    GateThresholds,
    ToolParameterSpec,
    ToolSet,
    VirtualTool,
    agg_cos,
    agg_text,
    build_tool_set,
    cosine,
    default_base_tools,
    diversity_gate,
    dump_tool_registry,
    embed,
    load_tool_registry,
    parse_variant,
    propose_variant,
    tool_from_record,
    tool_to_record,
)

QUERY = ToolParameterSpec("query", "string", "search text", True, "query")


def make_tool(name, description, domain="general"):
    return VirtualTool(id=name, name=name, description=description,
                       parameters=(QUERY,), domain=domain)


def reference_gate(candidate, members, thresholds):
    """Brute-force re-evaluation of the dual-gating decision."""
    cold = len(members) < 2
    if members:
        cand = embed(candidate.description)
        cos_mean = sum(
            cosine(cand, embed(t.description)) for t in members
        ) / len(members)
        text_mean = sum(
            normalized_text_sim(candidate.description, t.description)
            for t in members
        ) / len(members)
    else:
        cos_mean = text_mean = 0.0
    semantic_ok = cold or cos_mean > thresholds.theta_c
    return semantic_ok and text_mean < thresholds.theta_b


def random_description(rng):
    words = ["archive", "search", "records", "passages", "topics", "sports",
             "finance", "history", "maps", "finds", "queries", "curated"]
    return " ".join(rng.choices(words, k=rng.randint(2, 10)))


class TestEmbedding:
    def test_unit_norm(self):
        vec = embed("some descriptive tool text")
        assert math.sqrt(sum(v * v for v in vec)) == pytest.approx(1.0)

    def test_blank_is_zero_vector(self):
        assert embed("   ") == [0.0] * 256

    def test_deterministic(self):
        assert embed("alpha beta") == embed("alpha beta")

    def test_case_insensitive(self):
        assert embed("Alpha Beta") == embed("alpha beta")

    def test_cosine_zero_vector_guard(self):
        assert cosine([0.0] * 4, [1.0, 0.0, 0.0, 0.0]) == 0.0

    def test_cosine_self_similarity(self):
        vec = embed("identical text")
        assert cosine(vec, vec) == pytest.approx(1.0)


class TestToolInvariants:
    def test_name_charset_enforced(self):
        with pytest.raises(ValueError):
            make_tool("Bad Name!", "desc")

    def test_exactly_one_query_param(self):
        with pytest.raises(ValueError):
            VirtualTool(id="t", name="t", description="d",
                        parameters=(QUERY, QUERY), domain="g")

    def test_empty_description_rejected(self):
        with pytest.raises(ValueError):
            make_tool("tool", "")

    def test_query_param_accessor(self):
        assert make_tool("tool", "desc").query_param.name == "query"


class TestDiversityGate:
    def test_cold_start_semantic_clause_bypassed(self):
        """Under 2 accepted tools the cosine threshold cannot reject."""
        candidate = make_tool("cand", "totally unrelated wording here")
        toolset = ToolSet([make_tool("one", "something else entirely")])
        decision = diversity_gate(candidate, toolset,
                                  GateThresholds(theta_c=0.99))
        assert decision.cold_start
        assert decision.accept

    def test_textual_redundancy_rejects_even_cold(self):
        candidate = make_tool("cand", "searches curated sports passages")
        toolset = ToolSet([make_tool("one", "searches curated sports passages")])
        decision = diversity_gate(candidate, toolset, GateThresholds())
        assert not decision.accept

    def test_empty_set_aggregates_are_zero(self):
        candidate = make_tool("cand", "anything")
        assert agg_cos(candidate, []) == 0.0
        assert agg_text(candidate, []) == 0.0

    def test_oracle_equivalence_randomized(self):
        rng = random.Random(11)
        for trial in range(300):
            members = [
                make_tool(f"m{j}", random_description(rng))
                for j in range(rng.randint(0, 5))
            ]
            candidate = make_tool("cand", random_description(rng))
            thresholds = GateThresholds(theta_c=rng.uniform(-1, 1),
                                        theta_b=rng.uniform(0, 1))
            decision = diversity_gate(candidate, ToolSet(members), thresholds)
            assert decision.accept == reference_gate(candidate, members,
                                                     thresholds)

    def test_threshold_monotonicity(self):
        """Loosening both thresholds can only keep or gain acceptance."""
        rng = random.Random(13)
        for trial in range(100):
            members = [make_tool(f"m{j}", random_description(rng))
                       for j in range(rng.randint(2, 5))]
            candidate = make_tool("cand", random_description(rng))
            tc, tb = rng.uniform(-1, 1), rng.uniform(0, 1)
            strict = diversity_gate(candidate, ToolSet(members),
                                    GateThresholds(tc, tb))
            loose = diversity_gate(
                candidate, ToolSet(members),
                GateThresholds(max(-1.0, tc - 0.3), min(1.0, tb + 0.3)))
            if strict.accept:
                assert loose.accept


class TestVariantProposal:
    def test_simulator_variant_parses(self):
        base = default_base_tools()[0]
        variant = propose_variant(base, SimulatorBackend(), 0)
        assert variant.base_id == base.id
        assert variant.name == f"{base.name}_v0"

    def test_parse_variant_requires_block(self):
        base = default_base_tools()[0]
        with pytest.raises(ParseError):
            parse_variant("no block here", base)

    def test_parse_variant_rejects_bad_json(self):
        base = default_base_tools()[0]
        with pytest.raises(ParseError):
            parse_variant("<variant>{nope}</variant>", base)

    def test_variant_from_derived_tool_rejected(self):
        derived = VirtualTool(id="d", name="d", description="x",
                              parameters=(QUERY,), domain="g", base_id="b")
        with pytest.raises(ValueError):
            propose_variant(derived, SimulatorBackend(), 0)


class TestBuildToolSet:
    def test_bases_admitted_unconditionally(self):
        bases = default_base_tools()[:3]
        toolset = build_tool_set(bases, 0, SimulatorBackend())
        assert [t.id for t in toolset] == [b.id for b in bases]

    def test_variants_grow_the_set(self):
        bases = default_base_tools()[:4]
        toolset = build_tool_set(bases, 2, SimulatorBackend())
        assert len(toolset) == 4 + 4 * 2
        assert len(toolset.acceptance_log) >= 8
        accepted = [e for e in toolset.acceptance_log if e["decision"] == "accept"]
        assert len(accepted) == 8

    def test_exhaustion_carries_partial_set(self):
        class Repetitive:
            def chat(self, request):
                # every proposal identical to the base: always text-redundant
                base = default_base_tools()[0]
                import json

                record = dict(tool_to_record(base), name="echo_tool")
                return f"<variant>{json.dumps(record)}</variant>"

        bases = default_base_tools()[:1]
        with pytest.raises(Exhausted) as err:
            build_tool_set(bases, 1, Repetitive(), max_attempts_per_slot=2)
        assert len(err.value.partial.tools) == 1


class TestRegistry:
    def test_round_trip(self, tmp_path):
        tools = default_base_tools()[:5]
        path = tmp_path / "registry.json"
        dump_tool_registry(tools, path)
        loaded = load_tool_registry(path)
        assert [tool_to_record(t) for t in loaded] == \
            [tool_to_record(t) for t in tools]

    def test_duplicate_names_rejected(self, tmp_path):
        import json

        records = [tool_to_record(default_base_tools()[0])] * 2
        path = tmp_path / "dup.json"
        path.write_text(json.dumps(records))
        with pytest.raises(ValueError):
            load_tool_registry(path)

    def test_default_base_inventory(self):
        tools = default_base_tools()
        assert len(tools) == 19
        assert len({t.name for t in tools}) == 19
        for tool in tools:
            assert tool.query_param.required

    def test_record_round_trip_preserves_base_id(self):
        tool = VirtualTool(id="v", name="v", description="d",
                           parameters=(QUERY,), domain="g", base_id="orig")
        assert tool_from_record(dict(tool_to_record(tool), id="v")).base_id == "orig"
