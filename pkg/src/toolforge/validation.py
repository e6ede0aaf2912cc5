"""Multi-layer validation: assistant-turn grammar, the nine-rule static layer,
and the three-principle judge layer.

Rules are written as independent predicates over the raw sample so that a
single targeted defect flips a single rule; all nine always run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .backend import ChatMessage, ChatRequest
from .errors import JudgeParseError
from .generation import REFLECTION_MARKERS, SWITCH_MARKERS, Sample
from .retrieval import tokenize

RULE_IDS = tuple(f"R{i}" for i in range(1, 10))

RULE_DIMENSIONS = {
    "R1": "format_structure",
    "R2": "format_structure",
    "R3": "tool_protocol",
    "R4": "tool_protocol",
    "R5": "format_structure",
    "R6": "dialogue_correctness",
    "R7": "dialogue_correctness",
    "R8": "dialogue_correctness",
    "R9": "traceability",
}

PRINCIPLES = (
    "tool_calling_correctness",
    "logical_soundness",
    "thought_action_consistency",
)

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_TOOL_CALL_RE = re.compile(r"<tool_call>\s*(\{.*?\})\s*</tool_call>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_TAG_RE = re.compile(r"<[^>]+>")

_MARKER_CLASS = {
    REFLECTION_MARKERS["tool_misselection"]: ("tool_misselection", None),
    REFLECTION_MARKERS["argument_misselection"]: ("argument_misselection", None),
    SWITCH_MARKERS["A"]: ("tool_switching", "A"),
    SWITCH_MARKERS["B"]: ("tool_switching", "B"),
}
_MARKER_RE = re.compile(
    "|".join(re.escape(m) for m in _MARKER_CLASS)
)


@dataclass(frozen=True)
class ToolCall:
    name: str | None
    arguments: dict | None
    malformed: bool = False


@dataclass(frozen=True)
class ParsedAssistantTurn:
    think: str | None
    tool_calls: tuple[ToolCall, ...]
    answer: str | None
    residue: str
    think_count: int = 0

    @property
    def well_formed(self) -> bool:
        return (
            self.think_count == 1
            and not self.residue.strip()
            and not (self.tool_calls and self.answer is not None)
        )


def parse_assistant_turn(content: str) -> ParsedAssistantTurn:
    """Best-effort parse; malformed input lands in residue, never raises."""
    spans = []
    thinks = []
    for m in _THINK_RE.finditer(content):
        thinks.append(m.group(1))
        spans.append(m.span())
    calls = []
    for m in _TOOL_CALL_RE.finditer(content):
        spans.append(m.span())
        try:
            obj = json.loads(m.group(1))
            name = obj.get("name") if isinstance(obj, dict) else None
            args = obj.get("arguments") if isinstance(obj, dict) else None
            if not isinstance(name, str) or not isinstance(args, dict):
                calls.append(ToolCall(name if isinstance(name, str) else None,
                                      args if isinstance(args, dict) else None,
                                      malformed=True))
            else:
                calls.append(ToolCall(name, args))
        except json.JSONDecodeError:
            calls.append(ToolCall(None, None, malformed=True))
    answer = None
    m = _ANSWER_RE.search(content)
    if m:
        answer = m.group(1)
        spans.append(m.span())
    residue_chars = list(content)
    for start, end in spans:
        for i in range(start, end):
            residue_chars[i] = " "
    return ParsedAssistantTurn(
        think=thinks[0] if thinks else None,
        tool_calls=tuple(calls),
        answer=answer,
        residue="".join(residue_chars),
        think_count=len(thinks),
    )


def render_assistant_turn(parsed: ParsedAssistantTurn) -> str:
    """Inverse of parse_assistant_turn for well-formed turns."""
    parts = [f"<think>{parsed.think or ''}</think>"]
    if parsed.answer is not None:
        parts.append(f"<answer>{parsed.answer}</answer>")
    else:
        for call in parsed.tool_calls:
            payload = json.dumps(
                {"name": call.name, "arguments": call.arguments}, sort_keys=True
            )
            parts.append(f"<tool_call>\n{payload}\n</tool_call>")
    return "\n".join(parts)


@dataclass
class RuleReport:
    results: dict
    passed: bool

    def failed_rules(self):
        return [r for r in RULE_IDS if self.results[r] != "pass"]

    def passes(self, rule_id: str) -> bool:
        return self.results[rule_id] == "pass"

    def to_record(self) -> dict:
        return {"rules": dict(self.results), "passed": self.passed}


@dataclass
class SemanticVerdict:
    principles: dict
    passed: bool

    def to_record(self) -> dict:
        return {"principles": dict(self.principles), "passed": self.passed}


@dataclass
class ValidationReport:
    rule: RuleReport
    semantic: SemanticVerdict | None
    accepted: bool

    def to_record(self, sample_id: str | None = None) -> dict:
        record = {
            "rules": dict(self.rule.results),
            "semantic": self.semantic.to_record() if self.semantic else None,
            "accepted": self.accepted,
        }
        if sample_id is not None:
            record = {"sample_id": sample_id, **record}
        return record


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    tokens = tokenize(text)
    return " ".join(t for t in tokens if t not in ("a", "an", "the"))


# --- individual rules -----------------------------------------------------------

def _assistant_turns(sample: Sample):
    return [t for t in sample.turns if t.role == "assistant"]


def _rule_r1(sample: Sample, **_):
    for i, turn in enumerate(_assistant_turns(sample)):
        parsed = parse_assistant_turn(turn.content)
        if parsed.think_count != 1:
            return f"assistant turn {i}: expected one think block, found {parsed.think_count}"
        if parsed.residue.strip():
            return f"assistant turn {i}: unrecognized content outside blocks"
        if parsed.tool_calls and parsed.answer is not None:
            return f"assistant turn {i}: tool calls and answer are mutually exclusive"
        if not parsed.tool_calls and parsed.answer is None:
            return f"assistant turn {i}: neither tool calls nor an answer"
    return None


def _rule_r2(sample: Sample, **_):
    turns = sample.turns
    if len(turns) < 3:
        return "dialogue too short"
    if turns[0].role != "system" or turns[1].role != "user":
        return "dialogue must open with system then user"
    pending = 0
    for i, turn in enumerate(turns[2:], start=2):
        if turn.role == "assistant":
            if pending:
                return f"turn {i}: assistant before {pending} expected tool turns"
            pending = len(_TOOL_CALL_RE.findall(turn.content))
        elif turn.role == "tool":
            if pending <= 0:
                return f"turn {i}: tool turn without a preceding tool call"
            pending -= 1
        else:
            return f"turn {i}: unexpected role {turn.role!r}"
    if pending:
        return f"{pending} tool calls left unanswered"
    last = turns[-1]
    if last.role != "assistant" or not _ANSWER_RE.search(last.content):
        return "final assistant turn must carry an answer"
    return None


def _all_calls(sample: Sample):
    calls = []
    for turn in _assistant_turns(sample):
        calls.extend(parse_assistant_turn(turn.content).tool_calls)
    return calls


def _rule_r3(sample: Sample, **_):
    offered = {t.name for t in sample.tools_offered}
    for call in _all_calls(sample):
        if call.name is not None and call.name not in offered:
            return f"called tool {call.name!r} is not offered"
    return None


_KIND_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "string_list": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
}


def _rule_r4(sample: Sample, **_):
    tools_by_name = {t.name: t for t in sample.tools_offered}
    for call in _all_calls(sample):
        if call.malformed:
            return "tool call JSON is malformed"
        tool = tools_by_name.get(call.name)
        if tool is None:
            continue  # unknown tools are R3's business
        specs = {p.name: p for p in tool.parameters}
        for pname, spec in specs.items():
            if spec.required and pname not in call.arguments:
                return f"{call.name}: required parameter {pname!r} missing"
        for pname, value in call.arguments.items():
            spec = specs.get(pname)
            if spec is None:
                return f"{call.name}: unknown parameter {pname!r}"
            if not _KIND_CHECKS[spec.kind](value):
                return f"{call.name}: parameter {pname!r} is not a {spec.kind}"
        query = call.arguments.get(tool.query_param.name)
        if not isinstance(query, str) or not query.strip():
            return f"{call.name}: query argument is empty"
    return None


def _final_answer(sample: Sample):
    for turn in reversed(sample.turns):
        if turn.role == "assistant":
            m = _ANSWER_RE.search(turn.content)
            return m.group(1) if m else None
    return None


def _rule_r5(sample: Sample, **_):
    answer = _final_answer(sample)
    if answer is None:
        return "no answer block"
    if not answer.strip():
        return "answer block is empty"
    if _TAG_RE.search(answer):
        return "answer block contains markup"
    if _MARKER_RE.search(answer):
        return "answer block contains reasoning markers"
    return None


_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")
_QUOTE_RE = re.compile(r"\"[^\"]+\"")
_PROPER_RE = re.compile(r"^[A-Z][a-z']+$")


def _fact_asserting(sentence: str) -> bool:
    """A sentence asserts retrieved facts if it carries a digit, a quoted span,
    or a proper-noun-cased token past the sentence head."""
    if any(ch.isdigit() for ch in sentence):
        return True
    if _QUOTE_RE.search(sentence):
        return True
    words = sentence.split()
    return any(_PROPER_RE.match(w.strip(",;:()")) for w in words[1:])


def _ngrams(tokens, n=4):
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def _rule_r6(sample: Sample, **_):
    question = sample.turns[1].content if len(sample.turns) > 1 else ""
    ground_text = [question]
    for turn in sample.turns:
        if turn.role == "assistant":
            parsed = parse_assistant_turn(turn.content)
            think = parsed.think or ""
            ground_grams = _ngrams(tokenize(" ".join(ground_text)))
            for sentence in _SENTENCE_SPLIT_RE.split(think):
                if not sentence.strip() or not _fact_asserting(sentence):
                    continue
                tokens = tokenize(sentence)
                if len(tokens) < 4:
                    continue
                if not (_ngrams(tokens) & ground_grams):
                    return f"ungrounded assertion: {sentence.strip()[:80]!r}"
        elif turn.role == "tool":
            ground_text.append(turn.content)
    return None


def _rule_r7(sample: Sample, **_):
    answer = _final_answer(sample)
    if answer is None:
        return "no answer block"
    expected = sample.provenance.get("seed_answer", "")
    if normalize_answer(answer) != normalize_answer(expected):
        return f"answer {answer.strip()!r} does not match the seed answer"
    return None


def _realized_structure(sample: Sample):
    """(calls per round, motif sequence) reconstructed from the turns."""
    rounds = []
    motifs = []
    for turn in _assistant_turns(sample):
        parsed = parse_assistant_turn(turn.content)
        if not parsed.tool_calls:
            continue
        think = parsed.think or ""
        markers = [_MARKER_CLASS[m.group(0)] for m in _MARKER_RE.finditer(think)]
        is_correction = any(klass != "tool_switching" for klass, _ in markers)
        motifs.extend(markers)
        if not is_correction:
            rounds.append(len(parsed.tool_calls))
    return tuple(rounds), motifs


def _rule_r8(sample: Sample, *, catalog_by_id=None, **_):
    pattern = (catalog_by_id or {}).get(sample.pattern_id)
    if pattern is None:
        return f"unknown pattern {sample.pattern_id!r}"
    realized_rounds, realized_motifs = _realized_structure(sample)
    if realized_rounds != pattern.calls_per_round:
        return (f"realized structure {realized_rounds} != "
                f"declared {pattern.calls_per_round}")
    declared = [(e.klass, e.switching_case) for e in pattern.perturbations]
    if realized_motifs != declared:
        return (f"realized motifs {realized_motifs} != declared {declared}")
    return None


def _rule_r9(sample: Sample, *, catalog_by_id=None, **_):
    prov = sample.provenance
    if not prov.get("seed_id") or prov["seed_id"] != sample.seed_id:
        return "provenance seed id missing or inconsistent"
    if not prov.get("pattern_id") or prov["pattern_id"] != sample.pattern_id:
        return "provenance pattern id missing or inconsistent"
    if catalog_by_id is not None and sample.pattern_id not in catalog_by_id:
        return f"pattern {sample.pattern_id!r} does not resolve"
    offered = {t.name for t in sample.tools_offered} | {t.id for t in sample.tools_offered}
    for tool_id in prov.get("tool_ids", []):
        if tool_id not in offered:
            return f"provenance tool {tool_id!r} does not resolve"
    declared_gold = set(prov.get("gold_passage_ids", []))
    for pair in sample.info_pairs:
        refs = {p["id"] for p in pair.good} - {p["id"] for p in pair.bad}
        if not refs <= declared_gold:
            return (f"pair {pair.call_index} references untracked passages "
                    f"{sorted(refs - declared_gold)}")
    if not prov.get("pipeline_version"):
        return "pipeline version missing"
    return None


_RULES = {
    "R1": _rule_r1,
    "R2": _rule_r2,
    "R3": _rule_r3,
    "R4": _rule_r4,
    "R5": _rule_r5,
    "R6": _rule_r6,
    "R7": _rule_r7,
    "R8": _rule_r8,
    "R9": _rule_r9,
}


def rule_check(sample: Sample, toolset=None, catalog=None) -> RuleReport:
    """Evaluate all nine rules; failures are reported, never raised."""
    by_id = None
    if catalog is not None:
        from .patterns import catalog_by_id as _cbi
        by_id = catalog if isinstance(catalog, dict) else _cbi(catalog)
    results = {}
    for rule_id, rule in _RULES.items():
        detail = rule(sample, catalog_by_id=by_id)
        results[rule_id] = "pass" if detail is None else {"fail": detail}
    return RuleReport(results, all(v == "pass" for v in results.values()))


# --- model verification layer -------------------------------------------------------

_JUDGE_PROMPTS = {
    "tool_calling_correctness": (
        "You judge whether each retrieval tool in the dialogue is appropriately "
        "chosen and its query parameters sensibly configured. Reply with PASS or "
        "FAIL followed by a one-sentence rationale."
    ),
    "logical_soundness": (
        "You judge whether the intermediate reasoning and the analysis of "
        "retrieved content are coherent and free of factual errors. Reply with "
        "PASS or FAIL followed by a one-sentence rationale."
    ),
    "thought_action_consistency": (
        "You judge whether the reasoning chain rationally supports the tool "
        "calls made and the final conclusion. Reply with PASS or FAIL followed "
        "by a one-sentence rationale."
    ),
}

_VERDICT_RE = re.compile(r"\b(PASS|FAIL)\b")


def judge_request(sample: Sample, principle: str, index: int) -> ChatRequest:
    dialogue = json.dumps(
        [{"role": t.role, "content": t.content} for t in sample.turns],
        ensure_ascii=False,
    )
    return ChatRequest(
        messages=(
            ChatMessage("system", _JUDGE_PROMPTS[principle]),
            ChatMessage("user", f"Dialogue under review:\n{dialogue}"),
        ),
        tag=f"judge:principle-{index}",
    )


def model_verify(sample: Sample, backend) -> SemanticVerdict:
    principles = {}
    for index, principle in enumerate(PRINCIPLES, start=1):
        completion = backend.chat(judge_request(sample, principle, index))
        m = _VERDICT_RE.search(completion)
        if not m:
            raise JudgeParseError(
                f"judge for {principle} returned no PASS/FAIL token")
        if m.group(1) == "PASS":
            principles[principle] = "pass"
        else:
            rationale = completion[m.end():].lstrip(" :.-")
            principles[principle] = {"fail": rationale}
    return SemanticVerdict(principles,
                           all(v == "pass" for v in principles.values()))


def validate(sample: Sample, toolset=None, backend=None, mode: str = "rule_only",
             catalog=None) -> ValidationReport:
    """Rule layer first; judges only in full mode and only when rules pass."""
    rule = rule_check(sample, toolset, catalog)
    semantic = None
    if mode == "full" and rule.passed:
        semantic = model_verify(sample, backend)
    accepted = rule.passed and (semantic is None or semantic.passed)
    return ValidationReport(rule, semantic, accepted)
