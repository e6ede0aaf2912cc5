"""Interaction-pattern catalog: four paradigms, perturbation scripts, 29 default flows."""

from __future__ import annotations

import json
from dataclasses import dataclass

PARADIGMS = ("SRST", "SRMT", "MRST", "MRMT")
PERTURBATION_CLASSES = ("tool_misselection", "argument_misselection", "tool_switching")
SWITCHING_CASES = ("A", "B")


@dataclass(frozen=True)
class PerturbationEvent:
    klass: str
    round: int
    call_slot: int
    switching_case: str | None = None


@dataclass(frozen=True)
class InteractionPattern:
    id: str
    paradigm: str
    rounds: int
    calls_per_round: tuple[int, ...]
    perturbations: tuple[PerturbationEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "calls_per_round", tuple(self.calls_per_round))
        object.__setattr__(self, "perturbations", tuple(self.perturbations))

    @property
    def total_calls(self) -> int:
        return sum(self.calls_per_round)

    def misselection_events(self):
        return [p for p in self.perturbations
                if p.klass in ("tool_misselection", "argument_misselection")]

    def switching_events(self):
        return [p for p in self.perturbations if p.klass == "tool_switching"]


def validate_pattern(pattern: InteractionPattern):
    """Returns "ok" or a list of violation codes."""
    violations = []
    if pattern.paradigm not in PARADIGMS:
        violations.append("unknown-paradigm")
        return violations
    if pattern.rounds < 1 or len(pattern.calls_per_round) != pattern.rounds:
        violations.append("rounds-calls-mismatch")
    if any(c < 1 for c in pattern.calls_per_round):
        violations.append("nonpositive-calls")
    structure_ok = {
        "SRST": pattern.rounds == 1 and pattern.calls_per_round == (1,),
        "SRMT": pattern.rounds == 1 and len(pattern.calls_per_round) == 1
                and pattern.calls_per_round[0] >= 2,
        "MRST": pattern.rounds >= 2 and all(c == 1 for c in pattern.calls_per_round),
        "MRMT": pattern.rounds >= 2 and any(c >= 2 for c in pattern.calls_per_round),
    }[pattern.paradigm]
    if not structure_ok:
        violations.append("paradigm-structure-mismatch")
    for event in pattern.perturbations:
        if event.klass not in PERTURBATION_CLASSES:
            violations.append("unknown-perturbation-class")
            continue
        if not 1 <= event.round <= pattern.rounds:
            violations.append("round-out-of-range")
        elif not 1 <= event.call_slot <= pattern.calls_per_round[event.round - 1]:
            violations.append("slot-out-of-range")
        if event.klass == "tool_switching":
            if pattern.rounds < 2:
                violations.append("switching-on-single-round")
            if event.switching_case not in SWITCHING_CASES:
                violations.append("bad-switching-case")
        elif event.switching_case is not None:
            violations.append("spurious-switching-case")
    return violations or "ok"


def _flow(num, paradigm, calls, perturbations=()):
    return InteractionPattern(
        id=f"flow_{num:02d}",
        paradigm=paradigm,
        rounds=len(calls),
        calls_per_round=tuple(calls),
        perturbations=tuple(perturbations),
    )


def _tool(r, s):
    return PerturbationEvent("tool_misselection", r, s)


def _arg(r, s):
    return PerturbationEvent("argument_misselection", r, s)


def _switch(r, s, case):
    return PerturbationEvent("tool_switching", r, s, case)


def default_catalog() -> list[InteractionPattern]:
    """The default 29-flow realization of the paradigm x perturbation space."""
    return [
        # clean flows, one per paradigm
        _flow(1, "SRST", [1]),
        _flow(2, "SRMT", [2]),
        _flow(3, "MRST", [1, 1]),
        _flow(4, "MRMT", [2, 2]),
        # SRST single-error variants
        _flow(5, "SRST", [1], [_tool(1, 1)]),
        _flow(6, "SRST", [1], [_arg(1, 1)]),
        # SRMT (2 calls) single-error variants
        _flow(7, "SRMT", [2], [_tool(1, 1)]),
        _flow(8, "SRMT", [2], [_tool(1, 2)]),
        _flow(9, "SRMT", [2], [_arg(1, 1)]),
        _flow(10, "SRMT", [2], [_arg(1, 2)]),
        # MRST (2 rounds) single-error + switching variants
        _flow(11, "MRST", [1, 1], [_tool(1, 1)]),
        _flow(12, "MRST", [1, 1], [_tool(2, 1)]),
        _flow(13, "MRST", [1, 1], [_arg(1, 1)]),
        _flow(14, "MRST", [1, 1], [_arg(2, 1)]),
        _flow(15, "MRST", [1, 1], [_switch(2, 1, "A")]),
        _flow(16, "MRST", [1, 1, 1], [_switch(3, 1, "B")]),
        # MRMT (2 rounds x 2 calls) single-error variants
        _flow(17, "MRMT", [2, 2], [_tool(1, 1)]),
        _flow(18, "MRMT", [2, 2], [_tool(1, 2)]),
        _flow(19, "MRMT", [2, 2], [_tool(2, 1)]),
        _flow(20, "MRMT", [2, 2], [_tool(2, 2)]),
        _flow(21, "MRMT", [2, 2], [_arg(1, 1)]),
        _flow(22, "MRMT", [2, 2], [_arg(1, 2)]),
        _flow(23, "MRMT", [2, 2], [_arg(2, 1)]),
        _flow(24, "MRMT", [2, 2], [_arg(2, 2)]),
        # MRMT switching variants
        _flow(25, "MRMT", [2, 2], [_switch(2, 1, "A")]),
        _flow(26, "MRMT", [2, 2, 2], [_switch(3, 1, "B")]),
        # MRMT combined-error variants
        _flow(27, "MRMT", [2, 2], [_tool(1, 1), _arg(2, 2)]),
        _flow(28, "MRMT", [2, 2], [_arg(1, 2), _tool(2, 1)]),
        _flow(29, "MRMT", [2, 2], [_tool(1, 1), _arg(1, 2)]),
    ]


def pattern_to_record(pattern: InteractionPattern) -> dict:
    return {
        "id": pattern.id,
        "paradigm": pattern.paradigm,
        "rounds": pattern.rounds,
        "calls_per_round": list(pattern.calls_per_round),
        "perturbations": [
            {
                "class": e.klass,
                "round": e.round,
                "call_slot": e.call_slot,
                **({"switching_case": e.switching_case} if e.switching_case else {}),
            }
            for e in pattern.perturbations
        ],
    }


def pattern_from_record(record: dict) -> InteractionPattern:
    return InteractionPattern(
        id=record["id"],
        paradigm=record["paradigm"],
        rounds=record["rounds"],
        calls_per_round=tuple(record["calls_per_round"]),
        perturbations=tuple(
            PerturbationEvent(
                e["class"], e["round"], e["call_slot"], e.get("switching_case")
            )
            for e in record.get("perturbations", [])
        ),
    )


def load_catalog(path) -> list[InteractionPattern]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    patterns = [pattern_from_record(r) for r in raw]
    ids = [p.id for p in patterns]
    if len(set(ids)) != len(ids):
        raise ValueError("pattern ids must be unique")
    for p in patterns:
        verdict = validate_pattern(p)
        if verdict != "ok":
            raise ValueError(f"invalid pattern {p.id}: {verdict}")
    return patterns


def catalog_by_id(catalog) -> dict[str, InteractionPattern]:
    return {p.id: p for p in catalog}
