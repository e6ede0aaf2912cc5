"""Validator benchmark construction: corruption library, MCTS hard-negative
mining, three-tier benchmark assembly, and validator scoring.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
import re
from dataclasses import dataclass, field

from .errors import InsufficientPositives, MissingVerdict, NoQualifyingNegative
from .generation import DialogueTurn, Sample, sample_to_record
from .validation import RULE_IDS, rule_check

UCT_C = math.sqrt(2.0)
DEFAULT_DEPTH = 3


# --- turn surgery helpers ----------------------------------------------------

_TOOL_CALL_BLOCK_RE = re.compile(r"<tool_call>\s*(\{.*?\})\s*</tool_call>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)


def _replace_turn(sample: Sample, index: int, content: str) -> Sample:
    turns = list(sample.turns)
    turns[index] = DialogueTurn(turns[index].role, content)
    return dataclasses.replace(sample, turns=tuple(turns))


def _first_call_turn(sample: Sample):
    for i, turn in enumerate(sample.turns):
        if turn.role == "assistant" and _TOOL_CALL_BLOCK_RE.search(turn.content):
            return i
    return None


def _final_assistant_turn(sample: Sample):
    for i in range(len(sample.turns) - 1, -1, -1):
        if sample.turns[i].role == "assistant":
            return i
    return None


def _rewrite_first_call(sample: Sample, mutate) -> Sample | None:
    """Apply `mutate` to the JSON object of the first tool call."""
    index = _first_call_turn(sample)
    if index is None:
        return None
    content = sample.turns[index].content
    match = _TOOL_CALL_BLOCK_RE.search(content)
    try:
        obj = json.loads(match.group(1))
    except json.JSONDecodeError:
        return None
    obj = mutate(obj)
    if obj is None:
        return None
    block = f"<tool_call>\n{json.dumps(obj, sort_keys=True)}\n</tool_call>"
    return _replace_turn(sample, index,
                         content[:match.start()] + block + content[match.end():])


def _edit_think(sample: Sample, index: int, transform) -> Sample | None:
    content = sample.turns[index].content
    match = _THINK_RE.search(content)
    if not match:
        return None
    new_think = transform(match.group(1))
    return _replace_turn(
        sample, index,
        content[:match.start()] + f"<think>{new_think}</think>" + content[match.end():],
    )


def _edit_answer(sample: Sample, transform) -> Sample | None:
    index = _final_assistant_turn(sample)
    if index is None:
        return None
    content = sample.turns[index].content
    match = _ANSWER_RE.search(content)
    if not match:
        return None
    new_answer = transform(match.group(1))
    return _replace_turn(
        sample, index,
        content[:match.start()] + f"<answer>{new_answer}</answer>" + content[match.end():],
    )


# --- corruption library ------------------------------------------------------------

@dataclass(frozen=True)
class Corruption:
    id: str
    target_rule: str
    apply_fn: object
    params: dict = field(default_factory=dict)

    def apply(self, sample: Sample) -> Sample | None:
        """Corrupted copy, or None when inapplicable."""
        return self.apply_fn(sample)


def _drop_think_close(sample):
    index = _first_call_turn(sample)
    if index is None:
        index = _final_assistant_turn(sample)
    content = sample.turns[index].content
    if "</think>" not in content:
        return None
    return _replace_turn(sample, index, content.replace("</think>", "", 1))


def _drop_think_open(sample):
    index = _first_call_turn(sample)
    if index is None:
        return None
    content = sample.turns[index].content
    if "<think>" not in content:
        return None
    return _replace_turn(sample, index, content.replace("<think>", "", 1))


def _duplicate_tool_turn(sample):
    for i, turn in enumerate(sample.turns):
        if turn.role == "tool":
            turns = list(sample.turns)
            turns.insert(i + 1, DialogueTurn("tool", turn.content))
            return dataclasses.replace(sample, turns=tuple(turns))
    return None


def _swap_opening_turns(sample):
    if len(sample.turns) < 2:
        return None
    turns = list(sample.turns)
    turns[0], turns[1] = turns[1], turns[0]
    return dataclasses.replace(sample, turns=tuple(turns))


def _rename_tool(name):
    def mutate(obj):
        if obj.get("name") == name:
            return None
        return dict(obj, name=name)

    return lambda sample: _rewrite_first_call(sample, mutate)


def _drop_required_argument(sample):
    def mutate(obj):
        args = dict(obj.get("arguments", {}))
        key = "query" if "query" in args else (sorted(args)[0] if args else None)
        if key is None:
            return None
        del args[key]
        return dict(obj, arguments=args)

    return _rewrite_first_call(sample, mutate)


def _add_unknown_argument(sample):
    def mutate(obj):
        args = dict(obj.get("arguments", {}))
        if "unexpected_field" in args:
            return None
        args["unexpected_field"] = "x"
        return dict(obj, arguments=args)

    return _rewrite_first_call(sample, mutate)


def _taint_answer(suffix):
    return lambda sample: _edit_answer(sample, lambda a: a + suffix)


def _fabricate_fact(sentence):
    def apply(sample):
        index = _final_assistant_turn(sample)
        if index is None:
            return None
        return _edit_think(sample, index, lambda t: f"{t} {sentence}")

    return apply


def _replace_answer(replacement):
    return lambda sample: _edit_answer(sample, lambda a: replacement)


def _spurious_marker(marker):
    def apply(sample):
        index = _first_call_turn(sample)
        if index is None:
            return None
        return _edit_think(
            sample, index, lambda t: f"{t} {marker} revisiting the earlier call."
        )

    return apply


def _blank_provenance(key):
    def apply(sample):
        if not sample.provenance.get(key):
            return None
        prov = dict(sample.provenance)
        prov[key] = ""
        return dataclasses.replace(sample, provenance=prov)

    return apply


def atomic_corruptions() -> list[Corruption]:
    """One canonical corruption per rule R1..R9."""
    return [
        Corruption("r1_drop_think_close", "R1", _drop_think_close),
        Corruption("r2_duplicate_tool_turn", "R2", _duplicate_tool_turn),
        Corruption("r3_rename_tool", "R3", _rename_tool("nonexistent_tool"),
                   {"name": "nonexistent_tool"}),
        Corruption("r4_drop_required_argument", "R4", _drop_required_argument),
        Corruption("r5_answer_markup", "R5", _taint_answer(" <the>")),
        Corruption("r6_fabricated_fact", "R6", _fabricate_fact(
            "the ledger shows 99123 units were shipped in 1877.")),
        Corruption("r7_replace_answer", "R7",
                   _replace_answer("an entirely different answer"),
                   {"replacement": "an entirely different answer"}),
        Corruption("r8_spurious_reflection", "R8",
                   _spurious_marker("[reflection-tool]")),
        Corruption("r9_blank_seed_id", "R9", _blank_provenance("seed_id"),
                   {"key": "seed_id"}),
    ]


def corruption_variants() -> list[Corruption]:
    """Parameterized variants enlarging the MCTS action space."""
    return [
        Corruption("r1_drop_think_open", "R1", _drop_think_open),
        Corruption("r2_swap_opening_turns", "R2", _swap_opening_turns),
        Corruption("r3_rename_tool_alt", "R3", _rename_tool("imaginary_lookup"),
                   {"name": "imaginary_lookup"}),
        Corruption("r4_add_unknown_argument", "R4", _add_unknown_argument),
        Corruption("r5_answer_markup_alt", "R5", _taint_answer(" <an>")),
        Corruption("r6_fabricated_fact_alt", "R6", _fabricate_fact(
            "the registry counted 40321 attendees in 1904.")),
        Corruption("r7_replace_answer_alt", "R7",
                   _replace_answer("some other wrong answer"),
                   {"replacement": "some other wrong answer"}),
        Corruption("r8_spurious_switch", "R8", _spurious_marker("[switch-a]")),
        Corruption("r9_blank_pattern_id", "R9", _blank_provenance("pattern_id"),
                   {"key": "pattern_id"}),
    ]


# --- reward -------------------------------------------------------------------------

def serialize_sample(sample: Sample) -> str:
    return json.dumps(sample_to_record(sample), sort_keys=True, ensure_ascii=False)


def levenshtein(a: str, b: str) -> int:
    """Row-vectorized edit distance with common prefix/suffix stripping."""
    if a == b:
        return 0
    # shared prefix and suffix never contribute to the optimal edit script
    prefix = 0
    limit = min(len(a), len(b))
    while prefix < limit and a[prefix] == b[prefix]:
        prefix += 1
    suffix = 0
    while (suffix < limit - prefix
           and a[len(a) - 1 - suffix] == b[len(b) - 1 - suffix]):
        suffix += 1
    a = a[prefix:len(a) - suffix]
    b = b[prefix:len(b) - suffix]
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) > len(b):
        a, b = b, a
    # Myers/Hyyro bit-parallel DP: one big-int bitvector op per text character
    m = len(a)
    peq: dict[str, int] = {}
    for i, ch in enumerate(a):
        peq[ch] = peq.get(ch, 0) | (1 << i)
    mask = (1 << m) - 1
    high = 1 << (m - 1)
    vp, vn = mask, 0
    score = m
    for ch in b:
        eq = peq.get(ch, 0)
        d0 = ((((eq & vp) + vp) & mask) ^ vp) | eq | vn
        hp = vn | (mask ^ (d0 | vp))
        hn = d0 & vp
        if hp & high:
            score += 1
        if hn & high:
            score -= 1
        hp = ((hp << 1) | 1) & mask
        hn = (hn << 1) & mask
        vp = hn | (mask ^ (d0 | hp))
        vn = d0 & hp
    return score


def normalized_edit_distance(a: str, b: str) -> float:
    longer = max(len(a), len(b))
    if longer == 0:
        return 0.0
    return levenshtein(a, b) / longer


def _reid(sample: Sample, suffix: str) -> Sample:
    """Derived samples get their own id so verdict maps cannot collide."""
    return dataclasses.replace(sample, id=f"{sample.id}-{suffix}")


def _sequence_suffix(target_rule: str, sequence) -> str:
    import hashlib

    digest = hashlib.sha256("|".join(sequence).encode()).hexdigest()[:8]
    return f"{target_rule.lower()}-{digest}"


@dataclass(frozen=True)
class MinedNegative:
    sample: Sample
    target_rule: str
    corruption_sequence: tuple[str, ...]
    difficulty: float


class _RewardCache:
    def __init__(self, base: Sample, target_rule: str, toolset, catalog,
                 corruptions_by_id):
        self.base = base
        self.base_text = serialize_sample(base)
        self.target_rule = target_rule
        self.toolset = toolset
        self.catalog = catalog
        self.corruptions_by_id = corruptions_by_id
        self._samples: dict[tuple, Sample | None] = {(): base}
        self._rewards: dict[tuple, float] = {}

    def sample_for(self, sequence: tuple) -> Sample | None:
        if sequence in self._samples:
            return self._samples[sequence]
        parent = self.sample_for(sequence[:-1])
        result = None
        if parent is not None:
            result = self.corruptions_by_id[sequence[-1]].apply(parent)
        self._samples[sequence] = result
        return result

    def applicable(self, sequence: tuple) -> list[str]:
        sample = self.sample_for(sequence)
        if sample is None:
            return []
        out = []
        for cid in sorted(self.corruptions_by_id):
            if cid in sequence:
                continue
            if self.sample_for(sequence + (cid,)) is not None:
                out.append(cid)
        return out

    def reward(self, sequence: tuple) -> float:
        if sequence in self._rewards:
            return self._rewards[sequence]
        value = 0.0
        if sequence:
            sample = self.sample_for(sequence)
            if sample is not None:
                report = rule_check(sample, self.toolset, self.catalog)
                if not report.passes(self.target_rule):
                    others = sum(
                        1 for r in RULE_IDS
                        if r != self.target_rule and report.passes(r)
                    )
                    if others >= 7:
                        distance = normalized_edit_distance(
                            self.base_text, serialize_sample(sample))
                        value = 0.5 * (others / 8.0) + 0.5 * (1.0 - distance)
        self._rewards[sequence] = value
        return value


class _Node:
    __slots__ = ("sequence", "children", "untried", "visits", "total")

    def __init__(self, sequence, untried):
        self.sequence = sequence
        self.children: dict[str, _Node] = {}
        self.untried = list(untried)
        self.visits = 0
        self.total = 0.0


def _uct_pick(node: _Node) -> str:
    log_n = math.log(max(1, node.visits))
    best_id, best_score = None, -math.inf
    for action_id in sorted(node.children):
        child = node.children[action_id]
        score = (child.total / child.visits
                 + UCT_C * math.sqrt(log_n / child.visits))
        if score > best_score:
            best_id, best_score = action_id, score
    return best_id


def _mine_one(base: Sample, target_rule: str, budget: int, *, toolset, catalog,
              corruptions_by_id, depth: int, rng: random.Random) -> dict:
    cache = _RewardCache(base, target_rule, toolset, catalog, corruptions_by_id)
    root = _Node((), cache.applicable(()))
    found: dict[tuple, float] = {}

    def record(sequence):
        if sequence and sequence not in found:
            value = cache.reward(sequence)
            if value > 0.0:
                found[sequence] = value

    for _ in range(budget):
        node = root
        # selection
        while len(node.sequence) < depth and not node.untried and node.children:
            node = node.children[_uct_pick(node)]
        # expansion
        if len(node.sequence) < depth and node.untried:
            action_id = node.untried.pop(0)
            sequence = node.sequence + (action_id,)
            child = _Node(sequence, cache.applicable(sequence))
            node.children[action_id] = child
            node = child
            record(sequence)
        # rollout
        sequence = node.sequence
        while len(sequence) < depth:
            options = cache.applicable(sequence)
            if not options:
                break
            sequence = sequence + (rng.choice(options),)
            record(sequence)
        value = cache.reward(sequence) if sequence else 0.0
        # backpropagation
        walk = root
        walk.visits += 1
        walk.total += value
        for action_id in node.sequence:
            walk = walk.children[action_id]
            walk.visits += 1
            walk.total += value
    return {seq: (value, cache.sample_for(seq)) for seq, value in found.items()}


def mcts_mine(target_rule: str, positives, budget: int, *, toolset, catalog,
              corruptions=None, depth: int = DEFAULT_DEPTH, seed: int = 0,
              top_n: int = 5) -> list[MinedNegative]:
    """UCT search for the hardest rule-targeted negatives.

    A state qualifies when it fails the target rule while passing at least 7 of
    the other 8; difficulty blends that near-miss rate with textual proximity
    to the clean sample.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    positives = list(positives)
    if corruptions is None:
        corruptions = atomic_corruptions() + corruption_variants()
    corruptions_by_id = {c.id: c for c in corruptions}
    per_base = max(1, budget // max(1, len(positives)))
    candidates = []
    for base_index, base in enumerate(positives):
        rng = random.Random(f"{seed}:{target_rule}:{base_index}")
        found = _mine_one(base, target_rule, per_base, toolset=toolset,
                          catalog=catalog, corruptions_by_id=corruptions_by_id,
                          depth=depth, rng=rng)
        for sequence, (value, sample) in found.items():
            candidates.append(MinedNegative(
                _reid(sample, _sequence_suffix(target_rule, sequence)),
                target_rule, sequence, value))
    if not candidates:
        raise NoQualifyingNegative(
            f"no qualifying negative for {target_rule} within budget")
    candidates.sort(key=lambda n: (-n.difficulty, n.sample.id, n.corruption_sequence))
    return candidates[:top_n]


def exhaustive_mine(target_rule: str, base: Sample, *, toolset, catalog,
                    corruptions, depth: int, top_n: int = 5) -> list[MinedNegative]:
    """Brute-force oracle over every corruption sequence up to `depth`."""
    corruptions_by_id = {c.id: c for c in corruptions}
    cache = _RewardCache(base, target_rule, toolset, catalog, corruptions_by_id)
    results = []

    def recurse(sequence):
        if sequence:
            value = cache.reward(sequence)
            if value > 0.0:
                results.append(MinedNegative(
                    _reid(cache.sample_for(sequence),
                          _sequence_suffix(target_rule, sequence)),
                    target_rule, sequence, value))
        if len(sequence) >= depth:
            return
        for cid in cache.applicable(sequence):
            recurse(sequence + (cid,))

    recurse(())
    results.sort(key=lambda n: (-n.difficulty, n.sample.id, n.corruption_sequence))
    return results[:top_n]


def random_negatives(target_rule: str, base: Sample, budget: int, *, toolset,
                     catalog, corruptions, depth: int, seed: int = 0,
                     want: int = 5) -> list[MinedNegative]:
    """Uniformly random qualifying corruptions; baseline for mining dominance."""
    corruptions_by_id = {c.id: c for c in corruptions}
    cache = _RewardCache(base, target_rule, toolset, catalog, corruptions_by_id)
    rng = random.Random(seed)
    found = {}
    for _ in range(budget):
        sequence = ()
        length = rng.randint(1, depth)
        for _ in range(length):
            options = cache.applicable(sequence)
            if not options:
                break
            sequence = sequence + (rng.choice(options),)
        if sequence and sequence not in found:
            value = cache.reward(sequence)
            if value > 0.0:
                found[sequence] = value
                if len(found) >= want:
                    break
    return [
        MinedNegative(_reid(cache.sample_for(seq),
                            _sequence_suffix(target_rule, seq)),
                      target_rule, seq, value)
        for seq, value in found.items()
    ]


# --- three-tier benchmark -------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkItem:
    sample: Sample
    label: str  # valid | invalid
    tier: str  # positive | rule_negative | semantic_negative
    pattern_id: str
    target: str | None = None


def _retarget_tool(sample: Sample) -> Sample | None:
    """Semantic violation 1: plausible-but-wrong tool choice that stays protocol-valid."""
    names = sorted(t.name for t in sample.tools_offered)

    def mutate(obj):
        current = obj.get("name")
        for name in names:
            if name != current:
                return dict(obj, name=name)
        return None

    return _rewrite_first_call(sample, mutate)


def _insert_non_sequitur(sample: Sample) -> Sample | None:
    index = _first_call_turn(sample)
    if index is None:
        return None
    return _edit_think(
        sample, index,
        lambda t: f"{t} this strongly suggests the outcome depends on the "
                  "weather, so further evidence is unnecessary.",
    )


def _insert_contradiction(sample: Sample) -> Sample | None:
    index = _first_call_turn(sample)
    if index is None:
        return None
    return _edit_think(
        sample, index,
        lambda t: f"{t} i will rely on the previously gathered evidence "
                  "instead of calling any tool.",
    )


SEMANTIC_REWRITES = {
    "tool_calling_correctness": _retarget_tool,
    "logical_soundness": _insert_non_sequitur,
    "thought_action_consistency": _insert_contradiction,
}


def build_benchmark(samples_by_pattern: dict, toolset, backend=None, budget: int = 200,
                    *, catalog, positives_per_pattern: int = 20, seed: int = 0,
                    depth: int = 2) -> list[BenchmarkItem]:
    """Three tiers: stratified positives, MCTS rule negatives, semantic rewrites."""
    pattern_ids = sorted(samples_by_pattern)
    for pid in pattern_ids:
        if len(samples_by_pattern[pid]) < positives_per_pattern:
            raise InsufficientPositives(
                f"pattern {pid} has {len(samples_by_pattern[pid])} "
                f"< {positives_per_pattern} samples")
    items = []
    for pid in pattern_ids:
        for sample in samples_by_pattern[pid][:positives_per_pattern]:
            items.append(BenchmarkItem(sample, "valid", "positive", pid))

    stratified = [samples_by_pattern[pid][0] for pid in pattern_ids]
    for rule in RULE_IDS:
        negatives = mcts_mine(rule, stratified, budget, toolset=toolset,
                              catalog=catalog, seed=seed, depth=depth)
        for negative in negatives:
            items.append(BenchmarkItem(
                negative.sample, "invalid", "rule_negative",
                negative.sample.pattern_id, rule))

    for pid in pattern_ids:
        base = samples_by_pattern[pid][0]
        for principle, rewrite in SEMANTIC_REWRITES.items():
            rewritten = rewrite(base)
            if rewritten is None:
                rewritten = _insert_non_sequitur(base) or base
            items.append(BenchmarkItem(
                _reid(rewritten, f"sem-{principle}"), "invalid",
                "semantic_negative", pid, principle))
    return items


# --- metrics ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[int, int, int, int]  # tp, fp, fn, tn

    def to_record(self) -> dict:
        tp, fp, fn, tn = self.confusion
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        }


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int) -> MetricsReport:
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return MetricsReport(accuracy, precision, recall, f1, (tp, fp, fn, tn))


def score_validator(benchmark, verdicts: dict) -> MetricsReport:
    """Positive class is "valid": tp = valid accepted, tn = invalid rejected."""
    tp = fp = fn = tn = 0
    for item in benchmark:
        if item.sample.id not in verdicts:
            raise MissingVerdict(item.sample.id)
        accepted = bool(verdicts[item.sample.id])
        if item.label == "valid":
            if accepted:
                tp += 1
            else:
                fn += 1
        else:
            if accepted:
                fp += 1
            else:
                tn += 1
    return metrics_from_confusion(tp, fp, fn, tn)


def benchmark_item_to_record(item: BenchmarkItem) -> dict:
    return {
        "label": item.label,
        "tier": item.tier,
        "pattern_id": item.pattern_id,
        "target": item.target,
        "sample": sample_to_record(item.sample),
    }
