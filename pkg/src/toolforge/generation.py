"""Dialogue synthesis: plan an execution trace, augment it with retrieved
distractors, generate the multi-turn dialogue, and assemble the final sample.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass

from . import __version__
from .backend import ChatMessage, ChatRequest, fingerprint
from .errors import (
    AssemblyError,
    DialogueParseError,
    PlanParseError,
    StructureMismatch,
    SynthesisFailure,
)
from .patterns import InteractionPattern
from .planning import HeuristicScorer, select_plan
from .retrieval import retrieve_top_k
from .tools import ToolSet, VirtualTool, tool_to_record

# Motif markers the generator is instructed to emit; the rule layer matches
# them against the pattern's declared perturbation script.
REFLECTION_MARKERS = {
    "tool_misselection": "[reflection-tool]",
    "argument_misselection": "[reflection-argument]",
}
SWITCH_MARKERS = {"A": "[switch-a]", "B": "[switch-b]"}

SYSTEM_PROMPT_TEMPLATE = """# Role
You are a helpful assistant answering the user's question with virtual search tools. \
Plan tool calls, analyze their results, correct your own mistakes, and finish with a \
single final answer.

# Output structures
Every reply is one of:
1. <think>your reasoning</think> followed by one or more tool calls, each written as
<tool_call>
{{"name": <function-name>, "arguments": <args-json-object>}}
</tool_call>
with consecutive blocks separated by one newline.
2. <think>your reasoning</think> followed by <answer>the final answer only</answer>.

The <answer> tag must contain nothing but the answer itself.

# Tools
You may call these functions:
<tools>{tools}</tools>"""

PLANNING_SYSTEM_PROMPT = (
    "You plan tool-calling execution traces. Given a question, its answer, a "
    "reasoning rationale, the offered tools, and the required round/call "
    "structure, emit one <trace>{json}</trace> block listing every call with "
    "round, call_slot, tool, arguments, and the id of the golden passage it "
    "relies on (ref). List any unreferenced golden passages in unused_refs."
)

DIALOGUE_SYSTEM_PROMPT = (
    "You write complete multi-turn tool-calling dialogues. Given the plan, the "
    "per-call information sets, and the perturbation script, emit the assistant "
    "and tool turns as <turn role=\"assistant\">...</turn> and "
    "<turn role=\"tool\">...</turn> blocks. Perturbed calls use the flawed call "
    "and the retrieved-only information, then a reflective assistant turn "
    "carrying the matching reflection marker issues the corrected call. "
    "Switching rounds carry their switch marker inside <think>. The final "
    "assistant turn answers inside <answer> tags."
)


@dataclass(frozen=True)
class SeedTriple:
    id: str
    question: str
    answer: str
    golden_context: tuple[dict, ...]

    def __post_init__(self):
        object.__setattr__(self, "golden_context", tuple(self.golden_context))
        if not self.question or not self.answer:
            raise ValueError("question and answer must be non-empty")
        if not self.golden_context:
            raise ValueError("at least one golden passage is required")

    def gold_passages(self) -> list[dict]:
        """Golden passages with their corpus ids attached."""
        return [
            {"id": gold_passage_id(self.id, n),
             "title": p.get("title", ""), "text": p["text"]}
            for n, p in enumerate(self.golden_context)
        ]


def gold_passage_id(seed_id: str, n: int) -> str:
    return f"gold:{seed_id}:{n}"


@dataclass(frozen=True)
class PlannedCall:
    round: int
    call_slot: int
    tool_id: str
    arguments: dict
    ref: str
    query_value: str


@dataclass(frozen=True)
class ExecutionTrace:
    calls: tuple[PlannedCall, ...]
    pattern_id: str
    unused_refs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))
        object.__setattr__(self, "unused_refs", tuple(self.unused_refs))


@dataclass(frozen=True)
class InformationPair:
    call_index: int
    good: tuple[dict, ...]
    bad: tuple[dict, ...]

    def __post_init__(self):
        object.__setattr__(self, "good", tuple(self.good))
        object.__setattr__(self, "bad", tuple(self.bad))


@dataclass(frozen=True)
class DialogueTurn:
    role: str
    content: str


@dataclass(frozen=True)
class Sample:
    id: str
    seed_id: str
    pattern_id: str
    tools_offered: tuple[VirtualTool, ...]
    turns: tuple[DialogueTurn, ...]
    info_pairs: tuple[InformationPair, ...]
    provenance: dict

    def __post_init__(self):
        object.__setattr__(self, "tools_offered", tuple(self.tools_offered))
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "info_pairs", tuple(self.info_pairs))


@dataclass
class SynthesisConfig:
    augmentation_k: int = 5
    run_seed: int = 0
    forced_paradigm: str | None = None
    forced_pattern_id: str | None = None
    extra_offered_tools: int = 3
    # regeneration nonce; distinguishes retry requests so a pure mock backend
    # can still answer each attempt differently
    nonce: int = 0


# --- perturbation plan --------------------------------------------------------

def wrong_tool_for(tool_id: str, toolset: ToolSet) -> VirtualTool:
    """Deterministic plausible-but-wrong tool: first other tool by ascending id."""
    for t in sorted(toolset, key=lambda t: t.id):
        if t.id != tool_id:
            return t
    raise ValueError("toolset has no alternative tool")


def perturbation_assignments(trace: ExecutionTrace, pattern: InteractionPattern,
                             toolset: ToolSet) -> dict:
    """Per perturbed (round, slot): the flawed call the generator should emit."""
    by_pos = {(c.round, c.call_slot): c for c in trace.calls}
    assignments = {}
    for event in pattern.misselection_events():
        call = by_pos[(event.round, event.call_slot)]
        if event.klass == "tool_misselection":
            wrong = wrong_tool_for(call.tool_id, toolset)
            assignments[(event.round, event.call_slot)] = {
                "class": event.klass,
                "wrong_tool": wrong.id,
                "wrong_arguments": {wrong.query_param.name: call.query_value},
            }
        else:
            assignments[(event.round, event.call_slot)] = {
                "class": event.klass,
                "wrong_tool": call.tool_id,
                "wrong_arguments": dict(call.arguments,
                                        **{_query_name(call, toolset): "broad unspecific lookup"}),
            }
    return assignments


def _query_name(call: PlannedCall, toolset: ToolSet) -> str:
    tool = toolset.by_id(call.tool_id)
    return tool.query_param.name if tool else "query"


def bad_info_positions(pattern: InteractionPattern) -> set[tuple[int, int]]:
    """(round, slot) positions whose tool turn shows retrieved-only information."""
    positions = set()
    for event in pattern.misselection_events():
        positions.add((event.round, event.call_slot))
    for event in pattern.switching_events():
        # the unproductive rounds preceding the switch
        back = 2 if event.switching_case == "B" else 1
        for r in range(max(1, event.round - back), event.round):
            positions.add((r, event.call_slot))
    return positions


# --- phase 1: planning ---------------------------------------------------------

_TRACE_RE = re.compile(r"<trace>\s*(\{.*?\})\s*</trace>", re.DOTALL)


def planning_request(seed: SeedTriple, plan, pattern: InteractionPattern,
                     toolset: ToolSet, sequence=None, nonce: int = 0) -> ChatRequest:
    from .patterns import pattern_to_record

    sequence = list(sequence if sequence is not None else plan.sequence)
    context = {
        "question": seed.question,
        "answer": seed.answer,
        "gold": seed.gold_passages(),
        "pattern": pattern_to_record(pattern),
        "sequence": sequence,
        "tools": [dict(tool_to_record(t), id=t.id) for t in toolset],
        "nonce": nonce,
    }
    user = (
        f"Question: {seed.question}\n"
        f"Answer: {seed.answer}\n"
        f"Rationale steps: {list(plan.rationale.steps)}\n"
        f"Structure: {pattern.rounds} rounds, calls per round "
        f"{list(pattern.calls_per_round)}\n"
        f"<context>{json.dumps(context, sort_keys=True)}</context>"
    )
    return ChatRequest(
        messages=(ChatMessage("system", PLANNING_SYSTEM_PROMPT),
                  ChatMessage("user", user)),
        tag="planning",
    )


def parse_trace(completion: str, seed: SeedTriple, pattern: InteractionPattern,
                toolset: ToolSet) -> ExecutionTrace:
    match = _TRACE_RE.search(completion)
    if not match:
        raise PlanParseError("completion lacks a <trace> block")
    try:
        raw = json.loads(match.group(1))
        raw_calls = raw["calls"]
    except (json.JSONDecodeError, KeyError, TypeError) as err:
        raise PlanParseError(f"trace document malformed: {err}") from err

    gold_ids = {p["id"] for p in seed.gold_passages()}
    calls = []
    for entry in raw_calls:
        try:
            tool_id = entry["tool"]
            arguments = dict(entry["arguments"])
            ref = entry["ref"]
            rnd, slot = int(entry["round"]), int(entry["call_slot"])
        except (KeyError, TypeError, ValueError) as err:
            raise PlanParseError(f"call entry malformed: {err}") from err
        tool = toolset.by_id(tool_id)
        if tool is None:
            raise PlanParseError(f"unknown tool {tool_id!r}")
        query_value = arguments.get(tool.query_param.name, "")
        if not query_value:
            raise PlanParseError(f"empty query argument for tool {tool_id!r}")
        if ref not in gold_ids:
            raise PlanParseError(f"ref {ref!r} is not a golden passage id")
        calls.append(PlannedCall(rnd, slot, tool_id, arguments, ref, query_value))

    realized: dict[int, int] = {}
    for c in calls:
        realized[c.round] = max(realized.get(c.round, 0), c.call_slot)
    structure = tuple(realized.get(r, 0) for r in range(1, max(realized, default=0) + 1))
    if structure != pattern.calls_per_round or len(calls) != pattern.total_calls:
        raise StructureMismatch(
            f"trace structure {structure} != pattern {pattern.calls_per_round}"
        )
    unused = tuple(raw.get("unused_refs", []))
    covered = {c.ref for c in calls} | set(unused)
    if gold_ids - covered:
        raise PlanParseError(f"golden passages not covered: {sorted(gold_ids - covered)}")
    calls.sort(key=lambda c: (c.round, c.call_slot))
    return ExecutionTrace(tuple(calls), pattern.id, unused)


def plan_trace(seed: SeedTriple, plan, pattern: InteractionPattern,
               toolset: ToolSet, backend) -> ExecutionTrace:
    request = planning_request(seed, plan, pattern, toolset)
    return parse_trace(backend.chat(request), seed, pattern, toolset)


# --- phase 2: augmentation ------------------------------------------------------

def augment(trace: ExecutionTrace, corpus_index, k: int = 5, *,
            seed: SeedTriple, run_seed: int = 0,
            pattern: InteractionPattern | None = None,
            toolset: ToolSet | None = None) -> list[InformationPair]:
    """Build (good, bad) information pairs for every planned call.

    bad is the top-k retrieved distractors (golden ref excluded); good adds the
    ref at a seeded-random position, so good minus bad is exactly the ref.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gold_by_id = {p["id"]: p for p in seed.gold_passages()}
    assignments = {}
    if pattern is not None and toolset is not None:
        assignments = perturbation_assignments(trace, pattern, toolset)
    pairs = []
    for i, call in enumerate(trace.calls):
        query = call.query_value
        assigned = assignments.get((call.round, call.call_slot))
        if assigned and assigned["class"] == "tool_misselection" and toolset:
            wrong = toolset.by_id(assigned["wrong_tool"])
            if wrong is not None and wrong.domain:
                query = f"{query} {wrong.domain}"
        retrieved = retrieve_top_k(corpus_index, query, k)
        bad = [
            {"id": doc.id, "title": doc.title, "text": doc.body}
            for doc, _ in retrieved
            if doc.id != call.ref
        ]
        ref_passage = gold_by_id[call.ref]
        rng = random.Random(f"{run_seed}:{seed.id}:{i}")
        good = list(bad)
        good.insert(rng.randint(0, len(bad)), ref_passage)
        pairs.append(InformationPair(i, tuple(good), tuple(bad)))
    return pairs


# --- phase 3: generation ---------------------------------------------------------

_TURN_RE = re.compile(
    r'<turn role="(assistant|tool)">(.*?)</turn>', re.DOTALL
)
_TOOL_CALL_COUNT_RE = re.compile(r"<tool_call>", re.DOTALL)
ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def render_tools(tools) -> str:
    return json.dumps([tool_to_record(t) for t in tools], sort_keys=True)


def render_passages(passages) -> str:
    if not passages:
        return "no relevant passages found."
    return "\n\n".join(
        f"{p['title']}: {p['text']}" if p.get("title") else p["text"]
        for p in passages
    )


def dialogue_request(seed: SeedTriple, trace: ExecutionTrace, pairs,
                     pattern: InteractionPattern, toolset: ToolSet,
                     offered_tools, nonce: int = 0) -> ChatRequest:
    from .patterns import pattern_to_record

    assignments = perturbation_assignments(trace, pattern, toolset)
    context = {
        "question": seed.question,
        "answer": seed.answer,
        "pattern": pattern_to_record(pattern),
        "calls": [
            {
                "round": c.round,
                "call_slot": c.call_slot,
                "tool": c.tool_id,
                "arguments": c.arguments,
                "ref": c.ref,
            }
            for c in trace.calls
        ],
        "info": [
            {"call_index": p.call_index, "good": list(p.good), "bad": list(p.bad)}
            for p in pairs
        ],
        "flaws": [
            {"round": r, "call_slot": s, **a}
            for (r, s), a in sorted(assignments.items())
        ],
        "tools": [dict(tool_to_record(t), id=t.id) for t in offered_tools],
        "nonce": nonce,
    }
    user = (
        f"Question: {seed.question}\n"
        f"Pattern: {pattern.id}\n"
        f"<context>{json.dumps(context, sort_keys=True)}</context>"
    )
    return ChatRequest(
        messages=(ChatMessage("system", DIALOGUE_SYSTEM_PROMPT),
                  ChatMessage("user", user)),
        tag="dialogue",
    )


def parse_dialogue(completion: str) -> list[DialogueTurn]:
    turns = [DialogueTurn(role, content.strip())
             for role, content in _TURN_RE.findall(completion)]
    if not turns:
        raise DialogueParseError("completion has no <turn> blocks")
    expected_tool_turns = 0
    for turn in turns:
        if turn.role == "assistant":
            expected_tool_turns = len(_TOOL_CALL_COUNT_RE.findall(turn.content))
        else:
            if expected_tool_turns <= 0:
                raise DialogueParseError("tool turn not preceded by a tool call")
            expected_tool_turns -= 1
    if turns[-1].role != "assistant" or not ANSWER_RE.search(turns[-1].content):
        raise DialogueParseError("dialogue lacks a final answer turn")
    return turns


def generate_dialogue(seed: SeedTriple, trace: ExecutionTrace, pairs,
                      pattern: InteractionPattern, backend, *,
                      toolset: ToolSet, offered_tools) -> list[DialogueTurn]:
    request = dialogue_request(seed, trace, pairs, pattern, toolset, offered_tools)
    body = parse_dialogue(backend.chat(request))
    system = DialogueTurn("system",
                          SYSTEM_PROMPT_TEMPLATE.format(tools=render_tools(offered_tools)))
    user = DialogueTurn("user", seed.question)
    return [system, user] + body


# --- phase 4: assembly ------------------------------------------------------------

def offered_tools_for(trace: ExecutionTrace, pattern: InteractionPattern,
                      toolset: ToolSet, extra: int = 3) -> list[VirtualTool]:
    ids = []
    for call in trace.calls:
        if call.tool_id not in ids:
            ids.append(call.tool_id)
    for assignment in perturbation_assignments(trace, pattern, toolset).values():
        if assignment["wrong_tool"] not in ids:
            ids.append(assignment["wrong_tool"])
    for t in sorted(toolset, key=lambda t: t.id):
        if len(ids) >= len(trace.calls) + extra + 1:
            break
        if t.id not in ids:
            ids.append(t.id)
    return [toolset.by_id(i) for i in ids]


def sample_id_for(seed_id: str, pattern_id: str, run_seed: int) -> str:
    digest = hashlib.sha256(f"{seed_id}|{pattern_id}|{run_seed}".encode()).hexdigest()
    return f"sample_{digest[:16]}"


def assemble(turns, pairs, seed: SeedTriple, pattern: InteractionPattern,
             toolset: ToolSet, run_seed: int, *, offered_tools=None,
             tag_fingerprints=None) -> Sample:
    turns = tuple(turns)
    if len(turns) < 3 or turns[0].role != "system" or turns[1].role != "user":
        raise AssemblyError("turn-prefix", "first turn must be system, second user")
    last_assistant = next((t for t in reversed(turns) if t.role == "assistant"), None)
    if last_assistant is None or not ANSWER_RE.search(last_assistant.content):
        raise AssemblyError("no-final-answer")
    for pair in pairs:
        good_ids = [p["id"] for p in pair.good]
        bad_ids = [p["id"] for p in pair.bad]
        if not set(good_ids) >= set(bad_ids) or len(set(good_ids) - set(bad_ids)) != 1:
            raise AssemblyError("pair-discipline", f"pair {pair.call_index}")
    offered = tuple(offered_tools) if offered_tools else tuple(toolset)
    used_tool_ids = sorted({
        c["name"] for t in turns if t.role == "assistant"
        for c in _extract_call_names(t.content)
    })
    provenance = {
        "seed_id": seed.id,
        "pattern_id": pattern.id,
        "tool_ids": used_tool_ids,
        "gold_passage_ids": [p["id"] for p in seed.gold_passages()],
        "backend_fingerprints": dict(tag_fingerprints or {}),
        "pipeline_version": __version__,
        "run_seed": run_seed,
        "seed_answer": seed.answer,
    }
    return Sample(
        id=sample_id_for(seed.id, pattern.id, run_seed),
        seed_id=seed.id,
        pattern_id=pattern.id,
        tools_offered=offered,
        turns=turns,
        info_pairs=tuple(pairs),
        provenance=provenance,
    )


_CALL_BLOCK_RE = re.compile(r"<tool_call>\s*(\{.*?\})\s*</tool_call>", re.DOTALL)


def _extract_call_names(content: str):
    names = []
    for block in _CALL_BLOCK_RE.findall(content):
        try:
            obj = json.loads(block)
            if isinstance(obj, dict) and "name" in obj:
                names.append({"name": obj["name"]})
        except json.JSONDecodeError:
            continue
    return names


# --- pipeline composition ----------------------------------------------------------

def choose_pattern(seed_id: str, catalog, config: SynthesisConfig) -> InteractionPattern:
    if config.forced_pattern_id:
        for p in catalog:
            if p.id == config.forced_pattern_id:
                return p
        raise ValueError(f"unknown pattern {config.forced_pattern_id!r}")
    candidates = [p for p in catalog
                  if config.forced_paradigm in (None, p.paradigm)]
    if not candidates:
        raise ValueError(f"no pattern for paradigm {config.forced_paradigm!r}")
    digest = hashlib.sha256(f"{seed_id}|{config.run_seed}".encode()).hexdigest()
    return candidates[int(digest[:8], 16) % len(candidates)]


def _shortlist_for_length(total_calls: int) -> int:
    # keep the exhaustive sequence argmax to a few thousand candidates
    return max(2, min(6, int(round(2000 ** (1.0 / max(1, total_calls))))))


def synthesize(seed: SeedTriple, toolset: ToolSet, catalog, corpus_index,
               backend, config: SynthesisConfig | None = None,
               scorer=None) -> Sample:
    """Full per-seed synthesis; stage errors surface as SynthesisFailure."""
    config = config or SynthesisConfig()
    scorer = scorer or HeuristicScorer(toolset)
    tag_fps = {}
    try:
        pattern = choose_pattern(seed.id, catalog, config)
        plan = select_plan(
            seed.question, toolset, catalog, scorer,
            paradigms=[pattern.paradigm],
            sequence_lengths=[pattern.total_calls],
            shortlist_n=_shortlist_for_length(pattern.total_calls),
        )
        request = planning_request(seed, plan, pattern, toolset, nonce=config.nonce)
        tag_fps["planning"] = f"{fingerprint(request.messages):016x}"
        trace = parse_trace(backend.chat(request), seed, pattern, toolset)
    except SynthesisFailure:
        raise
    except Exception as err:
        raise SynthesisFailure("planning", err) from err

    try:
        pairs = augment(
            trace, corpus_index, config.augmentation_k,
            seed=seed, run_seed=config.run_seed, pattern=pattern, toolset=toolset,
        )
    except Exception as err:
        raise SynthesisFailure("augmentation", err) from err

    try:
        offered = offered_tools_for(trace, pattern, toolset,
                                    extra=config.extra_offered_tools)
        request = dialogue_request(seed, trace, pairs, pattern, toolset, offered,
                                   nonce=config.nonce)
        tag_fps["dialogue"] = f"{fingerprint(request.messages):016x}"
        body = parse_dialogue(backend.chat(request))
        system = DialogueTurn(
            "system", SYSTEM_PROMPT_TEMPLATE.format(tools=render_tools(offered)))
        user = DialogueTurn("user", seed.question)
        turns = [system, user] + body
    except Exception as err:
        raise SynthesisFailure("generation", err) from err

    try:
        return assemble(turns, pairs, seed, pattern, toolset, config.run_seed,
                        offered_tools=offered, tag_fingerprints=tag_fps)
    except Exception as err:
        raise SynthesisFailure("assembly", err) from err


# --- seed / sample serialization -----------------------------------------------------

def seed_from_record(record: dict) -> SeedTriple:
    return SeedTriple(
        id=record["id"],
        question=record["question"],
        answer=record["answer"],
        golden_context=tuple(
            {"title": p.get("title", ""), "text": p["text"]}
            for p in record["golden_context"]
        ),
    )


def load_seeds_jsonl(path) -> list[SeedTriple]:
    seeds = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                seeds.append(seed_from_record(json.loads(line)))
    return seeds


def sample_to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "seed_id": sample.seed_id,
        "pattern_id": sample.pattern_id,
        "tools": [dict(tool_to_record(t), id=t.id) for t in sample.tools_offered],
        "messages": [{"role": t.role, "content": t.content} for t in sample.turns],
        "info_pairs": [
            {"call_index": p.call_index, "good": list(p.good), "bad": list(p.bad)}
            for p in sample.info_pairs
        ],
        "provenance": sample.provenance,
    }


def sample_from_record(record: dict) -> Sample:
    from .tools import tool_from_record

    return Sample(
        id=record["id"],
        seed_id=record["seed_id"],
        pattern_id=record["pattern_id"],
        tools_offered=tuple(tool_from_record(t) for t in record["tools"]),
        turns=tuple(DialogueTurn(m["role"], m["content"]) for m in record["messages"]),
        info_pairs=tuple(
            InformationPair(p["call_index"], tuple(p["good"]), tuple(p["bad"]))
            for p in record.get("info_pairs", [])
        ),
        provenance=dict(record["provenance"]),
    )
