"""Command-line interface for the synthesis, validation, and benchmarking pipeline."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import ConfigError, IoError, ToolforgeError
from .generation import sample_from_record, sample_to_record
from .mining import (
    benchmark_item_to_record,
    build_benchmark,
    mcts_mine,
    score_validator,
)
from .patterns import default_catalog, load_catalog
from .pipeline import (
    compute_stats,
    config_from_file,
    exit_status,
    run_synthesis,
)
from .simulator import SimulatorBackend
from .tools import ToolSet, default_base_tools, load_tool_registry
from .validation import RULE_IDS, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _load_samples(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(sample_from_record(json.loads(line)))
    return samples


def _toolset(tools_path):
    if tools_path:
        return ToolSet(load_tool_registry(tools_path))
    return ToolSet(default_base_tools())


def _catalog(patterns_path):
    return load_catalog(patterns_path) if patterns_path else default_catalog()


@click.group()
def main():
    """Synthesize, validate, mine, and score multi-hop tool-use dialogues."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def synth(config_path):
    """Run the full synthesis pipeline from a JSON config file."""
    try:
        config = config_from_file(config_path)
        samples_path, stats = run_synthesis(config)
    except (ConfigError, IoError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    from .report import write_stats_report

    artifacts = write_stats_report(stats, Path(config.output_dir))
    click.echo(json.dumps(stats.to_record(), indent=2, sort_keys=True))
    click.echo(f"samples: {samples_path}")
    click.echo(f"report: {artifacts['csv']} {artifacts['figure']}")
    sys.exit(exit_status(stats))


@main.command(name="validate")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--full", is_flag=True, help="Also run the model-judge layer.")
@click.option("--tools", "tools_path", type=click.Path(exists=True))
@click.option("--patterns", "patterns_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def validate_cmd(in_path, full, tools_path, patterns_path, out_path):
    """Validate samples from a JSONL file; one report line per sample."""
    toolset = _toolset(tools_path)
    catalog = _catalog(patterns_path)
    backend = SimulatorBackend() if full else None
    mode = "full" if full else "rule_only"
    lines = []
    rejected = 0
    for sample in _load_samples(in_path):
        report = validate(sample, toolset, backend=backend, mode=mode,
                          catalog=catalog)
        if not report.accepted:
            rejected += 1
        lines.append(json.dumps(report.to_record(sample.id), sort_keys=True))
    body = "\n".join(lines) + ("\n" if lines else "")
    if out_path:
        Path(out_path).write_text(body, encoding="utf-8")
    else:
        click.echo(body, nl=False)
    sys.exit(EXIT_PARTIAL if rejected else EXIT_OK)


@main.command()
@click.option("--rule", required=True, type=click.Choice(list(RULE_IDS)))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--budget", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tools", "tools_path", type=click.Path(exists=True))
@click.option("--patterns", "patterns_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def mine(rule, in_path, budget, seed, tools_path, patterns_path, out_path):
    """Mine the hardest rule-targeted negatives from clean samples."""
    toolset = _toolset(tools_path)
    catalog = _catalog(patterns_path)
    positives = _load_samples(in_path)
    try:
        negatives = mcts_mine(rule, positives, budget, toolset=toolset,
                              catalog=catalog, seed=seed)
    except ToolforgeError as err:
        click.echo(f"mining failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    lines = [
        json.dumps({
            "target_rule": negative.target_rule,
            "corruption_sequence": list(negative.corruption_sequence),
            "difficulty": negative.difficulty,
            "sample": sample_to_record(negative.sample),
        }, sort_keys=True)
        for negative in negatives
    ]
    body = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(body, encoding="utf-8")
    else:
        click.echo(body, nl=False)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="Samples JSONL file or a directory of them.")
@click.option("--budget", default=200, show_default=True)
@click.option("--per-pattern", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tools", "tools_path", type=click.Path(exists=True))
@click.option("--patterns", "patterns_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def bench(in_path, budget, per_pattern, seed, tools_path, patterns_path, out_path):
    """Build the three-tier validation benchmark."""
    toolset = _toolset(tools_path)
    catalog = _catalog(patterns_path)
    in_path = Path(in_path)
    files = sorted(in_path.glob("*.jsonl")) if in_path.is_dir() else [in_path]
    by_pattern: dict[str, list] = {}
    for file in files:
        for sample in _load_samples(file):
            by_pattern.setdefault(sample.pattern_id, []).append(sample)
    try:
        items = build_benchmark(by_pattern, toolset, budget=budget,
                                catalog=catalog, seed=seed,
                                positives_per_pattern=per_pattern)
    except ToolforgeError as err:
        click.echo(f"benchmark build failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    with open(out_path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(benchmark_item_to_record(item),
                                sort_keys=True, ensure_ascii=False) + "\n")
    click.echo(f"wrote {len(items)} benchmark items to {out_path}")


@main.command()
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True))
@click.option("--verdicts", "verdicts_path", required=True,
              type=click.Path(exists=True),
              help='JSON mapping sample id -> accepted (true/false).')
@click.option("--out", "out_dir", default=".", type=click.Path())
def score(bench_path, verdicts_path, out_dir):
    """Score a validator's verdicts against a benchmark file."""
    from .mining import BenchmarkItem
    from .report import write_score_report

    items = []
    with open(bench_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            items.append(BenchmarkItem(
                sample=sample_from_record(record["sample"]),
                label=record["label"],
                tier=record["tier"],
                pattern_id=record["pattern_id"],
                target=record.get("target"),
            ))
    with open(verdicts_path, encoding="utf-8") as fh:
        verdicts = json.load(fh)
    try:
        metrics = score_validator(items, verdicts)
    except ToolforgeError as err:
        click.echo(f"scoring failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics.to_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts = write_score_report(metrics, out_dir)
    click.echo(json.dumps(metrics.to_record(), indent=2, sort_keys=True))
    click.echo(f"report: {artifacts['csv']} {artifacts['figure']}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=".", type=click.Path())
def stats(in_path, out_dir):
    """Aggregate per-seed outcome records into route statistics."""
    from .report import write_stats_report

    records = []
    with open(in_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    result = compute_stats(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts = write_stats_report(result, out_dir)
    click.echo(json.dumps(result.to_record(), indent=2, sort_keys=True))
    click.echo(f"report: {artifacts['csv']} {artifacts['figure']}")


if __name__ == "__main__":
    main()
