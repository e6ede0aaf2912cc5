"""End-to-end batch orchestration: config, route mixing, synthesis workers,
validation with retries, and per-route success statistics.
"""

from __future__ import annotations

import dataclasses
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backend import BackendScript, LiveBackend, MockBackend
from .errors import ConfigError, IoError, SynthesisFailure
from .generation import (
    SynthesisConfig,
    gold_passage_id,
    load_seeds_jsonl,
    sample_to_record,
    synthesize,
)
from .patterns import PARADIGMS, default_catalog, load_catalog
from .retrieval import Document, build_index, load_corpus_jsonl
from .simulator import FailureModel, SimulatorBackend
from .tools import GateThresholds, ToolSet, default_base_tools, load_tool_registry
from .validation import validate

DEFAULT_ROUTE_MIX = {"SRST": 0.894, "SRMT": 0.035, "MRST": 0.035, "MRMT": 0.035}


@dataclass
class PipelineConfig:
    thresholds: GateThresholds = field(default_factory=GateThresholds)
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    augmentation_k: int = 5
    route_mix: dict = field(default_factory=lambda: dict(DEFAULT_ROUTE_MIX))
    retries: int = 2
    worker_count: int = 1
    run_seed: int = 0
    backend_kind: str = "mock"  # mock | live
    backend_endpoint: str | None = None
    backend_model: str = "default"
    backend_script: str | None = None  # MockBackend script path; else simulator
    failure: FailureModel | None = None
    validation_mode: str = "rule_only"
    seeds_path: str = "seeds.jsonl"
    tools_path: str | None = None
    corpus_path: str | None = None
    patterns_path: str | None = None
    output_dir: str = "out"

    def __post_init__(self):
        total = sum(self.route_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"route_mix sums to {total}, expected 1")
        for name in self.route_mix:
            if name not in PARADIGMS:
                raise ConfigError(f"unknown paradigm in route_mix: {name!r}")
        for attr in ("augmentation_k", "worker_count"):
            if getattr(self, attr) < 1:
                raise ConfigError(f"{attr} must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.backend_kind not in ("mock", "live"):
            raise ConfigError(f"unknown backend kind {self.backend_kind!r}")
        if self.validation_mode not in ("rule_only", "full"):
            raise ConfigError(f"unknown validation mode {self.validation_mode!r}")


def config_from_file(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise IoError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if "thresholds" in raw:
        raw["thresholds"] = GateThresholds(**raw["thresholds"])
    if "failure" in raw and raw["failure"] is not None:
        raw["failure"] = FailureModel(**raw["failure"])
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        return PipelineConfig(**raw)
    except TypeError as err:
        raise ConfigError(str(err)) from err


# --- route assignment ------------------------------------------------------------

def assign_paradigms(n: int, route_mix: dict, run_seed: int) -> list[str]:
    """Largest-remainder stratified assignment, order shuffled by run_seed."""
    names = sorted(route_mix)
    quotas = {name: n * route_mix[name] for name in names}
    counts = {name: int(quotas[name]) for name in names}
    short = n - sum(counts.values())
    by_remainder = sorted(names, key=lambda m: (-(quotas[m] - counts[m]), m))
    for name in by_remainder[:short]:
        counts[name] += 1
    slots = [name for name in names for _ in range(counts[name])]
    indices = list(range(n))
    random.Random(run_seed).shuffle(indices)
    assignment = [""] * n
    for slot, index in zip(slots, indices):
        assignment[index] = slot
    return assignment


# --- statistics --------------------------------------------------------------------

@dataclass(frozen=True)
class RouteStats:
    per_route: dict  # paradigm -> {attempts, successes, success_rate|None}
    total_attempts: int
    total_successes: int

    def to_record(self) -> dict:
        return {
            "routes": self.per_route,
            "total_attempts": self.total_attempts,
            "total_successes": self.total_successes,
        }


def compute_stats(records) -> RouteStats:
    per_route = {}
    for record in records:
        route = per_route.setdefault(record["paradigm"],
                                     {"attempts": 0, "successes": 0})
        route["attempts"] += 1
        if record["status"] == "success":
            route["successes"] += 1
    for route in per_route.values():
        route["success_rate"] = (
            route["successes"] / route["attempts"] if route["attempts"] else None
        )
    return RouteStats(
        per_route=per_route,
        total_attempts=sum(r["attempts"] for r in per_route.values()),
        total_successes=sum(r["successes"] for r in per_route.values()),
    )


# --- backend / input wiring ----------------------------------------------------------

def build_backend(config: PipelineConfig):
    if config.backend_kind == "live":
        if not config.backend_endpoint:
            raise ConfigError("live backend requires an endpoint")
        return LiveBackend(config.backend_endpoint, model=config.backend_model)
    if config.backend_script:
        try:
            script = BackendScript.load(config.backend_script)
        except OSError as err:
            raise IoError(f"cannot read script: {err}") from err
        return MockBackend(script)
    return SimulatorBackend(seed=config.run_seed, failure=config.failure)


def load_inputs(config: PipelineConfig):
    try:
        seeds = load_seeds_jsonl(config.seeds_path)
    except OSError as err:
        raise IoError(f"cannot read seeds: {err}") from err
    if config.tools_path:
        try:
            tools = load_tool_registry(config.tools_path)
        except OSError as err:
            raise IoError(f"cannot read tools: {err}") from err
    else:
        tools = default_base_tools()
    toolset = ToolSet(tools)
    catalog = load_catalog(config.patterns_path) if config.patterns_path \
        else default_catalog()

    documents = []
    if config.corpus_path:
        try:
            documents.extend(load_corpus_jsonl(config.corpus_path))
        except OSError as err:
            raise IoError(f"cannot read corpus: {err}") from err
    known = {d.id for d in documents}
    for seed in seeds:
        for n, passage in enumerate(seed.golden_context):
            pid = gold_passage_id(seed.id, n)
            if pid not in known:
                documents.append(
                    Document(pid, passage.get("title", ""), passage["text"]))
                known.add(pid)
    index = build_index(documents, k1=config.bm25_k1, b=config.bm25_b)
    return seeds, toolset, catalog, index


# --- synthesis run -----------------------------------------------------------------

def _process_seed(seed, paradigm, toolset, catalog, index, backend, config,
                  scorer):
    """Synthesize + validate one seed with retries; returns an outcome record."""
    last_error = "unknown"
    last_phase = "synthesis"
    for attempt in range(config.retries + 1):
        syn = SynthesisConfig(
            augmentation_k=config.augmentation_k,
            run_seed=config.run_seed,
            forced_paradigm=paradigm,
            nonce=attempt,
        )
        try:
            sample = synthesize(seed, toolset, catalog, index, backend, syn,
                                scorer=scorer)
        except SynthesisFailure as err:
            last_phase, last_error = err.phase, str(err.cause)
            continue
        report = validate(sample, toolset, backend=backend,
                          mode=config.validation_mode, catalog=catalog)
        if report.accepted:
            return {
                "seed_id": seed.id,
                "paradigm": paradigm,
                "status": "success",
                "attempts": attempt + 1,
            }, sample, report
        last_phase = "validation"
        if report.rule.passed:
            last_error = "semantic verification failed"
        else:
            last_error = f"rules failed: {report.rule.failed_rules()}"
    return {
        "seed_id": seed.id,
        "paradigm": paradigm,
        "status": "failure",
        "attempts": config.retries + 1,
        "phase": last_phase,
        "error": last_error,
    }, None, None


def run_synthesis(config: PipelineConfig, backend=None):
    """Full batch run; returns (samples path, RouteStats)."""
    from .planning import HeuristicScorer

    seeds, toolset, catalog, index = load_inputs(config)
    backend = backend or build_backend(config)
    assignment = assign_paradigms(len(seeds), config.route_mix, config.run_seed)
    scorer = HeuristicScorer(toolset)

    def work(item):
        i, seed = item
        return _process_seed(seed, assignment[i], toolset, catalog, index,
                             backend, config, scorer)

    if config.worker_count > 1:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            results = list(pool.map(work, enumerate(seeds)))
    else:
        results = [work(item) for item in enumerate(seeds)]

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / "samples.jsonl"
    failures_path = out_dir / "failures.jsonl"
    records = []
    with open(samples_path, "w", encoding="utf-8") as samples_fh, \
            open(failures_path, "w", encoding="utf-8") as failures_fh:
        for record, sample, report in results:
            records.append(record)
            if sample is not None:
                doc = sample_to_record(sample)
                doc["validation"] = report.to_record()
                samples_fh.write(json.dumps(doc, sort_keys=True,
                                            ensure_ascii=False) + "\n")
            else:
                failures_fh.write(json.dumps(record, sort_keys=True) + "\n")

    stats = compute_stats(records)
    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with open(out_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats.to_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return samples_path, stats


def exit_status(stats: RouteStats) -> int:
    """0 on success; 3 when any attempted route produced nothing."""
    for route in stats.per_route.values():
        if route["attempts"] > 0 and route["successes"] == 0:
            return 3
    return 0
