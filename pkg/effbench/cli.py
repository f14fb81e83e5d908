import json
import sys
from pathlib import Path

import click
from loguru import logger

from effbench import analysis, specfile
from effbench.app import create_app
from effbench.blocks.model import build_model
from effbench.checkpoint import load_checkpoint, save_checkpoint
from effbench.consts import EXIT_RUNTIME, RUN_RECORD_FILE, SUMMARY_FILE
from effbench.data import FORMATS, load_dataset, normalize, synthesize_dataset
from effbench.data.formats import dataset_files
from effbench.engine.training import evaluate, fit, summarize
from effbench.error_handling import SpecError, handles_errors


def resolve_spec(value: str) -> specfile.SpecFile:
    """a spec file path or the name of a bundled spec"""
    path = Path(value)
    if path.is_file():
        return specfile.load(path)
    if path.suffix or "/" in value:
        raise SpecError(f"spec file {value} does not exist")
    return specfile.load(specfile.bundled(value))


def read_data(config, model, data, format, synthetic, samples, difficulty, split):
    if synthetic:
        return synthesize_dataset(
            config.SYNTHETIC_SEED,
            samples or config.SYNTHETIC_SAMPLES,
            model.class_count,
            model.input_shape,
            config.SYNTHETIC_DIFFICULTY if difficulty is None else difficulty,
            split,
        )
    if data is None:
        raise click.UsageError("pass --data DIR or --synthetic")
    return load_dataset(data, format, split, class_count=model.class_count, sample_shape=model.input_shape)


def data_options(func):
    for option in reversed(
        [
            click.option("--data", type=click.Path(exists=True, file_okay=False, path_type=Path)),
            click.option("--format", "format_", type=click.Choice(FORMATS), default="idx_pair"),
            click.option("--synthetic", is_flag=True, help="class-template blobs instead of --data"),
            click.option("--samples", type=click.IntRange(min=1), help="synthetic sample count"),
            click.option("--difficulty", type=click.FloatRange(min=0), help="synthetic noise level"),
        ]
    ):
        func = option(func)
    return func


@click.group()
@click.option("--debug", is_flag=True, help="log at debug level and print full tracebacks")
@click.option("--log-dir", type=click.Path(file_okay=False, path_type=Path))
@click.pass_context
def cli(ctx, debug, log_dir):
    """Micro CNN engine and static cost analyzer for EffNet, MobileNet and ShuffleNet blocks."""
    overrides = {}
    if debug:
        overrides.update(DEBUG=True, LOG_LEVEL="DEBUG")
    if log_dir is not None:
        overrides["LOG_DIR"] = log_dir
    ctx.obj = create_app(**overrides)


@cli.command()
@click.argument("spec")
@click.option("--format", "format_", type=click.Choice(["table", "records"]), default="table")
@handles_errors
def analyze(spec, format_):
    """Per-layer FLOPs, parameters and data flow of SPEC."""
    model = resolve_spec(spec).model
    report = analysis.count_flops(model)
    if format_ == "records":
        click.echo(analysis.format_records(report))
    else:
        click.echo(analysis.format_table(report))


@cli.command()
@click.argument("spec")
@data_options
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="run directory")
@click.option("--seeds", help="comma separated seeds overriding the spec")
@click.option("--steps", type=click.IntRange(min=1), help="update count overriding the spec")
@click.option("--epochs", type=click.IntRange(min=1), help="epoch count overriding the spec")
@click.pass_obj
@handles_errors
def train(config, spec, data, format_, synthetic, samples, difficulty, out, seeds, steps, epochs):
    """Train SPEC once per seed and write records, checkpoints and a summary."""
    spec_file = resolve_spec(spec)
    model, train_config = spec_file.model, spec_file.train
    if seeds:
        try:
            train_config.seeds = specfile.parse_seeds(seeds)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--seeds")
    if steps:
        train_config.steps = steps
    if epochs:
        train_config.epochs, train_config.steps = epochs, None
    out = out or Path(config.RUNS_DIR) / model.name

    train_set = read_data(config, model, data, format_, synthetic, samples, difficulty, "train")
    if synthetic:
        test_set = read_data(
            config, model, None, None, True, max(len(train_set) // 5, model.class_count), difficulty, "test"
        )
    elif dataset_files(data, format_, "test")[0].exists():
        test_set = read_data(config, model, data, format_, False, None, None, "test")
    else:
        test_set = None
    train_set, stats = normalize(train_set)
    if test_set is not None:
        test_set, _ = normalize(test_set, stats)

    records = []
    for seed in train_config.seeds:
        graph = build_model(model, seed)
        record = fit(graph, train_set, train_config, seed, test_set)
        seed_dir = out / f"seed-{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        (seed_dir / RUN_RECORD_FILE).write_text(json.dumps(record.to_dict(), indent=2))
        if record.status == "ok":
            save_checkpoint(seed_dir, graph, model, stats)
        records.append(record)
        click.echo(
            f"seed {seed}: {record.status}, train accuracy {record.final_train_accuracy}, "
            f"test accuracy {record.final_test_accuracy}"
            + (f" ({record.message})" if record.message else "")
        )

    summary = dict(
        summarize(records),
        name=model.name,
        spec_hash=model.spec_hash(),
        train=train_config.to_dict(),
    )
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2))
    logger.info(f"wrote {out / SUMMARY_FILE}")
    if summary["mean"] is not None:
        click.echo(
            f"mean accuracy {summary['mean']:.4f} (std {summary['std']:.4f}) "
            f"over {len(summary['finals'])} seeds"
        )
    if summary["aborted"]:
        click.echo(f"error: aborted seeds {summary['aborted']}", err=True)
        sys.exit(EXIT_RUNTIME)


@cli.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--spec", "spec", required=True, help="spec the checkpoint must have been trained from")
@data_options
@click.option("--split", type=click.Choice(["train", "test"]), default="test")
@click.pass_obj
@handles_errors
def eval_(config, checkpoint, spec, data, format_, synthetic, samples, difficulty, split):
    """Inference-mode accuracy of CHECKPOINT, overall and per class."""
    model = resolve_spec(spec).model
    restored = load_checkpoint(checkpoint, expected=model)
    dataset = read_data(config, model, data, format_, synthetic, samples, difficulty, split)
    if restored.stats is not None:
        dataset, _ = normalize(dataset, restored.stats)
    result = evaluate(restored.graph, dataset)
    click.echo(f"accuracy {result.accuracy:.4f} over {result.count} samples")
    for label, accuracy in enumerate(result.per_class):
        click.echo(f"class {label}: {accuracy:.4f}")


@cli.command()
@click.argument("specs", nargs=-1)
@click.option("--runs-root", type=click.Path(file_okay=False, path_type=Path))
@click.pass_obj
@handles_errors
def compare(config, specs, runs_root):
    """FLOPs and factor of each spec against the first, plus mean accuracy of recorded runs."""
    if len(specs) < 2:
        raise click.UsageError("compare needs at least two specs, the first is the baseline")
    runs_root = Path(runs_root or config.RUNS_DIR)
    reports, accuracies = [], {}
    for spec in specs:
        model = resolve_spec(spec).model
        reports.append(analysis.count_flops(model))
        summary_path = runs_root / model.name / SUMMARY_FILE
        if summary_path.is_file():
            summary = json.loads(summary_path.read_text())
            if summary.get("spec_hash") == model.spec_hash() and summary.get("mean") is not None:
                accuracies[model.name] = summary["mean"]
            else:
                logger.warning(f"ignoring {summary_path}: recorded for a different spec")
    click.echo(analysis.format_comparison(analysis.compare(reports, 0, accuracies)))


def main():
    cli(prog_name="effbench")
