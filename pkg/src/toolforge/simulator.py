"""Deterministic generator backend for tests and the CLI's mock mode.

Every prompt produced by the pipeline embeds a machine-readable
<context>{json}</context> block; this backend reads only that block and emits a
conforming completion. It is a pure function of the request, so full pipeline
runs against it are reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

from .errors import BadRequest
from .generation import REFLECTION_MARKERS, SWITCH_MARKERS, render_passages
from .patterns import pattern_from_record

_CONTEXT_RE = re.compile(r"<context>(\{.*\})</context>", re.DOTALL)


@dataclass(frozen=True)
class FailureModel:
    """Inject deterministic parse failures on one synthesis phase and paradigm."""

    phase: str  # planning | generation
    probability: float
    paradigm: str | None = None


def _unit_draw(*parts) -> float:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()
    return int(digest[:12], 16) / float(16 ** 12)


class SimulatorBackend:
    """Scripted-pipeline generator: conforming traces, dialogues, and judges."""

    def __init__(self, seed: int = 0, failure: FailureModel | None = None,
                 judge_verdicts: dict | None = None):
        self.seed = seed
        self.failure = failure
        self.judge_verdicts = judge_verdicts or {}

    def chat(self, request) -> str:
        tag = request.tag
        if tag.startswith("judge:"):
            return self._judge(tag)
        ctx = self._context(request)
        if tag == "variant":
            return self._variant(ctx)
        if tag == "planning":
            return self._planning(ctx)
        if tag == "dialogue":
            return self._dialogue(ctx)
        raise BadRequest(f"simulator does not handle tag {tag!r}")

    def _context(self, request) -> dict:
        for message in reversed(request.messages):
            match = _CONTEXT_RE.search(message.content)
            if match:
                return json.loads(match.group(1))
        raise BadRequest("request carries no <context> block")

    def _should_fail(self, phase: str, ctx: dict) -> bool:
        if self.failure is None or self.failure.phase != phase:
            return False
        paradigm = ctx.get("pattern", {}).get("paradigm")
        if self.failure.paradigm and paradigm != self.failure.paradigm:
            return False
        draw = _unit_draw(self.seed, ctx.get("question", ""),
                          ctx.get("nonce", 0), phase)
        return draw < self.failure.probability

    # --- variant proposals -------------------------------------------------

    def _variant(self, ctx: dict) -> str:
        from .tools import template_description

        base = ctx["base"]
        idx = int(ctx["variant_index"])
        # inflection profiles 1..4; profile 0 is reserved for base tools
        record = {
            "name": f"{base['name']}_v{idx}",
            "description": template_description(1 + idx % 4, base["domain"]),
            "domain": base["domain"],
            "parameters": base["parameters"],
        }
        return f"<variant>{json.dumps(record, sort_keys=True)}</variant>"

    # --- planning ----------------------------------------------------------

    def _planning(self, ctx: dict) -> str:
        if self._should_fail("planning", ctx):
            return "unable to produce a plan for this request."
        pattern = pattern_from_record(ctx["pattern"])
        gold = ctx["gold"]
        sequence = ctx["sequence"]
        tools_by_id = {t["id"]: t for t in ctx["tools"]}
        total = pattern.total_calls
        calls = []
        j = 0
        for r, width in enumerate(pattern.calls_per_round, start=1):
            for s in range(1, width + 1):
                tool = tools_by_id[sequence[j % len(sequence)]]
                query_name = next(
                    p["name"] for p in tool["parameters"] if p["role"] == "query"
                )
                if len(gold) > total:
                    ref = gold[j]
                else:
                    ref = gold[j % len(gold)]
                query = f"{ctx['question']} {ref['title']}".strip()
                calls.append({
                    "round": r,
                    "call_slot": s,
                    "tool": tool["id"],
                    "arguments": {query_name: query},
                    "ref": ref["id"],
                })
                j += 1
        unused = [p["id"] for p in gold[total:]] if len(gold) > total else []
        doc = {"calls": calls, "unused_refs": unused}
        return f"<trace>\n{json.dumps(doc, sort_keys=True)}\n</trace>"

    # --- dialogue ------------------------------------------------------------

    def _dialogue(self, ctx: dict) -> str:
        if self._should_fail("generation", ctx):
            return "unable to write this dialogue."
        pattern = pattern_from_record(ctx["pattern"])
        calls = {(c["round"], c["call_slot"]): c for c in ctx["calls"]}
        ordered = sorted(ctx["calls"], key=lambda c: (c["round"], c["call_slot"]))
        pair_index = {
            (c["round"], c["call_slot"]): i for i, c in enumerate(ordered)
        }
        info = {p["call_index"]: p for p in ctx["info"]}
        flaws = {(f["round"], f["call_slot"]): f for f in ctx.get("flaws", [])}
        tools_by_id = {t["id"]: t for t in ctx["tools"]}
        switch_by_round = {
            e.round: e for e in pattern.switching_events()
        }
        from .generation import bad_info_positions

        bad_positions = bad_info_positions(pattern)

        turns = []

        def add(role, content):
            turns.append(f'<turn role="{role}">{content}</turn>')

        def call_block(tool_id, arguments):
            name = tools_by_id[tool_id]["name"] if tool_id in tools_by_id else tool_id
            payload = json.dumps({"name": name, "arguments": arguments},
                                 sort_keys=True)
            return f"<tool_call>\n{payload}\n</tool_call>"

        first_round = True
        for r, width in enumerate(pattern.calls_per_round, start=1):
            think_parts = []
            if first_round:
                think_parts.append(
                    "identify the problem type and decompose it into "
                    "retrieval steps solved through tool calls."
                )
                first_round = False
            else:
                think_parts.append(
                    "analyze the previous tool result and plan the next step."
                )
            switch = switch_by_round.get(r)
            if switch is not None:
                marker = SWITCH_MARKERS[switch.switching_case]
                if switch.switching_case == "A":
                    think_parts.append(
                        f"the earlier result was unproductive, {marker} "
                        "moving to a different tool."
                    )
                else:
                    think_parts.append(
                        f"the alternative was also unproductive, {marker} "
                        "returning to the original tool."
                    )
            blocks = []
            flawed_slots = []
            for s in range(1, width + 1):
                call = calls[(r, s)]
                flaw = flaws.get((r, s))
                if flaw is not None:
                    blocks.append(call_block(flaw["wrong_tool"],
                                             flaw["wrong_arguments"]))
                    flawed_slots.append(s)
                else:
                    blocks.append(call_block(call["tool"], call["arguments"]))
            add("assistant",
                f"<think>{' '.join(think_parts)}</think>\n" + "\n".join(blocks))
            for s in range(1, width + 1):
                pair = info[pair_index[(r, s)]]
                side = "bad" if ((r, s) in bad_positions) else "good"
                add("tool", render_passages(pair[side]))
            if flawed_slots:
                markers = " ".join(
                    f"the retrieved content does not address the sub-question, "
                    f"{REFLECTION_MARKERS[flaws[(r, s)]['class']]} correcting the call."
                    for s in flawed_slots
                )
                corrected = [
                    call_block(calls[(r, s)]["tool"], calls[(r, s)]["arguments"])
                    for s in flawed_slots
                ]
                add("assistant", f"<think>{markers}</think>\n" + "\n".join(corrected))
                for s in flawed_slots:
                    pair = info[pair_index[(r, s)]]
                    add("tool", render_passages(pair["good"]))
        add("assistant",
            "<think>i have gathered sufficient evidence across the retrieved "
            "passages and can conclude.</think>\n"
            f"<answer>{ctx['answer']}</answer>")
        return "\n".join(turns)

    # --- judges -----------------------------------------------------------------

    _PRINCIPLES = {
        "judge:principle-1": "tool_calling_correctness",
        "judge:principle-2": "logical_soundness",
        "judge:principle-3": "thought_action_consistency",
    }

    def _judge(self, tag: str) -> str:
        principle = self._PRINCIPLES.get(tag)
        verdict = self.judge_verdicts.get(principle, "PASS")
        if verdict == "PASS":
            return "PASS: the dialogue satisfies this principle."
        if verdict == "FAIL":
            return "FAIL: the dialogue violates this principle."
        return str(verdict)
