"""Command-line interface for the sleep-staging distillation toolkit."""

import sys
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import click
import pandas as pd
from rich.console import Console
from rich.table import Table

from sleepkd import __version__
from sleepkd.config import ExperimentMode, Settings, StageSchema, load_config
from sleepkd.core.features import compare_cases, export_bottleneck_features, write_feature_table
from sleepkd.core.orchestrator import ExperimentOrchestrator, with_mode
from sleepkd.core.rundir import RunDirectory, prepare_output_dir
from sleepkd.core.trainer import evaluate
from sleepkd.evaluation.report import ExperimentReport, render_tables
from sleepkd.logging import logger
from sleepkd.models.checkpoint import Checkpoint, read_checkpoint
from sleepkd.models.segmodel import predict_at_frequency, segment_length
from sleepkd.records.annotations import class_names, merge_stages
from sleepkd.records.dataset import PairedDataset, load_dataset, save_dataset, split_subjects
from sleepkd.records.prepare import TRAINING_SCHEMES, prepare_dataset
from sleepkd.records.signals import load_record, resample
from sleepkd.records.synth import synth_dataset
from sleepkd.utils.errors import ConfigError, ErrorCollector, SleepKDError

console = Console()

SCHEME_CHOICE = click.Choice([s.value for s in TRAINING_SCHEMES])
PARTITION_CHOICE = click.Choice(["train", "val", "test"])
MODALITY_CHOICE = click.Choice(["eeg", "ecg"])


@contextmanager
def _handle_errors(command: str) -> Iterator[None]:
    """Turn toolkit errors into a message and exit code 1."""
    log = logger.get_logger("cli")
    try:
        yield
    except click.ClickException:
        raise
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted by user[/yellow]")
        log.warning("command_interrupted", command=command)
        sys.exit(130)
    except SleepKDError as e:
        console.print(f"[bold red]{command} failed:[/bold red] {e}")
        logger.log_error(e, {"command": command})
        sys.exit(1)


def _settings(ctx: click.Context, **overrides: Any) -> Settings:
    """Effective settings: config file, environment, then command-line flags."""
    merged: Dict[str, Any] = {"experiment.seed": ctx.obj.get("seed")}
    merged.update(overrides)
    try:
        settings = load_config(ctx.obj.get("config_path"), ctx.obj.get("env_file"), merged)
    except (ValueError, FileNotFoundError) as e:
        raise ConfigError(f"Invalid configuration: {e}")
    logger.configure(settings.logging)
    return settings


def _out_dir(ctx: click.Context) -> Path:
    out = ctx.obj.get("out")
    if out is None:
        raise click.UsageError("This command needs --out", ctx=ctx)
    return Path(out)


def _data_dir(settings: Settings, data: Optional[Path]) -> Path:
    return Path(data) if data is not None else settings.data_dir


def _scheme_for(n_classes: int) -> StageSchema:
    for scheme in TRAINING_SCHEMES:
        if scheme.n_classes == n_classes:
            return scheme
    raise ConfigError(f"No class scheme with {n_classes} classes")


def _modality_for(checkpoint: Checkpoint, modality: Optional[str]) -> str:
    if modality is not None:
        return modality
    return "eeg" if checkpoint.training_meta.mode == ExperimentMode.EEG_BASELINE.value else "ecg"


def _load_for_checkpoint(
    settings: Settings, data: Optional[Path], checkpoint: Checkpoint
) -> PairedDataset:
    scheme = _scheme_for(checkpoint.network.n_classes)
    return load_dataset(_data_dir(settings, data), scheme)


@click.group(invoke_without_command=True)
@click.version_option(version=__version__, prog_name="sleep-kd")
@click.option(
    "--config",
    "-c",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Path to configuration file (YAML or JSON)",
)
@click.option(
    "--env-file",
    "-e",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Path to .env file",
)
@click.option("--seed", type=int, help="Override the experiment seed")
@click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory (dataset or run directory)",
)
@click.option("--force", is_flag=True, help="Overwrite an existing output directory")
@click.pass_context
def cli(
    ctx: click.Context,
    config: Optional[Path],
    env_file: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    force: bool,
) -> None:
    """Cross-modal knowledge distillation for sleep staging.

    Trains an EEG teacher and distills it into an ECG student. The default
    data root comes from XKD_DATA_DIR.
    """
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        return

    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config
    ctx.obj["env_file"] = env_file
    ctx.obj["seed"] = seed
    ctx.obj["out"] = out
    ctx.obj["force"] = force


@cli.command()
@click.argument("raw_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    "--scheme",
    "schemes",
    type=SCHEME_CHOICE,
    multiple=True,
    help="Class scheme to write hypnograms for (repeatable; default both)",
)
@click.option("--rate", type=int, help="Canonical sampling rate in Hz")
@click.pass_context
def prepare(
    ctx: click.Context, raw_dir: Path, schemes: List[str], rate: Optional[int]
) -> None:
    """Ingest RAWBIN/EDF recordings and CSV annotations from RAW_DIR."""
    out = _out_dir(ctx)
    with _handle_errors("prepare"):
        settings = _settings(ctx, **{"data.sample_rate": rate})
        prepare_output_dir(out, ctx.obj["force"])
        collector = ErrorCollector()
        manifest = prepare_dataset(
            raw_dir,
            out,
            settings.data,
            settings.experiment.seed,
            [StageSchema(s) for s in schemes] or TRAINING_SCHEMES,
            collector,
        )

        console.print(f"[green]✓[/green] Prepared {len(manifest.subjects)} subjects into {out}")
        for name in ("train", "val", "test"):
            console.print(f"  • {name}: {len(manifest.split.subjects(name))} subjects")

        if collector.has_failures:
            table = Table(title="Failed subjects")
            table.add_column("Subject", style="cyan")
            table.add_column("Error", style="red")
            table.add_column("Message")
            for failure in collector.summary()["failures"]:
                table.add_row(failure["item"], failure["error_type"], failure["message"])
            console.print(table)
            sys.exit(1)


@cli.command()
@click.option("--subjects", type=int, default=8, show_default=True, help="Number of subjects")
@click.option("--epochs", type=int, default=70, show_default=True, help="Epochs per subject")
@click.option(
    "--classes", type=click.Choice(["3", "4"]), default="4", show_default=True, help="Classes K"
)
@click.option("--rate", type=int, help="Sampling rate in Hz")
@click.pass_context
def synth(
    ctx: click.Context, subjects: int, epochs: int, classes: str, rate: Optional[int]
) -> None:
    """Generate a synthetic paired dataset."""
    out = _out_dir(ctx)
    with _handle_errors("synth"):
        settings = _settings(ctx, **{"data.sample_rate": rate})
        data = settings.data
        seed = settings.experiment.seed
        try:
            pairs = synth_dataset(
                subjects,
                epochs,
                int(classes),
                seed,
                sample_rate=data.sample_rate,
                epoch_duration=data.epoch_duration,
                eeg_channel=data.eeg_channel,
                ecg_channel=data.ecg_channel,
            )
        except ValueError as e:
            raise click.BadParameter(str(e))

        prepare_output_dir(out, ctx.obj["force"])
        hypnograms = {pairs[0].hypnogram.schema: {p.subject_id: p.hypnogram for p in pairs}}
        if StageSchema.FOUR_CLASS in hypnograms:
            hypnograms[StageSchema.THREE_CLASS] = {
                sid: merge_stages(h, StageSchema.THREE_CLASS)
                for sid, h in hypnograms[StageSchema.FOUR_CLASS].items()
            }

        save_dataset(
            out,
            {p.subject_id: (p.eeg, p.ecg) for p in pairs},
            hypnograms,
            split_subjects([p.subject_id for p in pairs], seed),
            data,
        )
        console.print(f"[green]✓[/green] Wrote {len(pairs)} synthetic subjects to {out}")


def _run(
    ctx: click.Context, settings: Settings, dataset: PairedDataset, command: str
) -> ExperimentReport:
    orchestrator = ExperimentOrchestrator(settings)
    with RunDirectory(_out_dir(ctx), ctx.obj["force"]) as run_dir:
        info = run_dir.start(settings, command)
        console.print(f"[bold blue]Run {info.run_id}[/bold blue] ({info.mode}) in {run_dir.path}")
        report = orchestrator.run_experiment(settings.experiment, dataset, run_dir)
    render_tables([report], console)
    return report


@cli.command()
@click.option(
    "--data", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Dataset dir"
)
@click.option(
    "--mode",
    type=click.Choice([ExperimentMode.EEG_BASELINE.value, ExperimentMode.ECG_BASELINE.value]),
    help="Baseline to train (default: the configured mode, eeg_baseline)",
)
@click.option("--scheme", type=SCHEME_CHOICE, help="Class scheme")
@click.option("--epochs", type=int, help="Training epochs")
@click.pass_context
def train(
    ctx: click.Context,
    data: Optional[Path],
    mode: Optional[str],
    scheme: Optional[str],
    epochs: Optional[int],
) -> None:
    """Train a baseline (the EEG teacher or the ECG student) on weighted cross entropy."""
    _out_dir(ctx)
    with _handle_errors("train"):
        settings = _settings(
            ctx,
            **{
                "experiment.mode": mode,
                "experiment.class_scheme": scheme,
                "experiment.epochs": epochs,
            },
        )
        if settings.experiment.mode.is_distillation:
            raise click.UsageError(
                f"Mode {settings.experiment.mode.value} is a distillation mode; use distill",
                ctx=ctx,
            )
        dataset = load_dataset(_data_dir(settings, data), settings.experiment.class_scheme)
        _run(ctx, settings, dataset, "train")


@cli.command()
@click.option(
    "--data", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Dataset dir"
)
@click.option(
    "--teacher",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Trained teacher checkpoint",
)
@click.option(
    "--mode",
    type=click.Choice([m.value for m in ExperimentMode if m.is_distillation]),
    help="Distillation mode (default: the configured mode, else at_sd_cl)",
)
@click.option("--alpha", type=float, help="Weight of the distillation term")
@click.option("--temperature", type=float, help="Softmax temperature")
@click.option("--scheme", type=SCHEME_CHOICE, help="Class scheme")
@click.option("--epochs", type=int, help="Final-step epochs")
@click.pass_context
def distill(
    ctx: click.Context,
    data: Optional[Path],
    teacher: Optional[Path],
    mode: Optional[str],
    alpha: Optional[float],
    temperature: Optional[float],
    scheme: Optional[str],
    epochs: Optional[int],
) -> None:
    """Distill a trained EEG teacher into an ECG student."""
    _out_dir(ctx)
    with _handle_errors("distill"):
        settings = _settings(
            ctx,
            **{
                "experiment.mode": mode,
                "experiment.alpha": alpha,
                "experiment.temperature": temperature,
                "experiment.class_scheme": scheme,
                "experiment.epochs": epochs,
                "experiment.teacher_checkpoint": str(teacher) if teacher else None,
            },
        )
        if not settings.experiment.mode.is_distillation:
            settings.experiment = with_mode(settings.experiment, ExperimentMode.AT_SD_CL)
        if settings.experiment.teacher_checkpoint is None:
            raise click.UsageError(
                f"Mode {settings.experiment.mode.value} needs --teacher", ctx=ctx
            )
        dataset = load_dataset(_data_dir(settings, data), settings.experiment.class_scheme)
        _run(ctx, settings, dataset, "distill")


@cli.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--data", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Dataset dir"
)
@click.option("--split", "partition", type=PARTITION_CHOICE, default="test", show_default=True)
@click.option("--modality", type=MODALITY_CHOICE, help="Input modality (from the checkpoint)")
@click.option("--report", "report_path", type=click.Path(path_type=Path), help="Report JSON path")
@click.pass_context
def eval_cmd(
    ctx: click.Context,
    checkpoint: Path,
    data: Optional[Path],
    partition: str,
    modality: Optional[str],
    report_path: Optional[Path],
) -> None:
    """Evaluate CHECKPOINT on one partition of a dataset."""
    with _handle_errors("eval"):
        settings = _settings(ctx)
        stored = read_checkpoint(checkpoint)
        dataset = _load_for_checkpoint(settings, data, stored)
        modality = _modality_for(stored, modality)
        windows = dataset.windows(partition, modality, settings.data.window_epochs)

        cm = evaluate(stored.to_model(), windows, settings.experiment.batch_size)
        report = ExperimentReport.from_confusion(
            cm,
            mode=stored.training_meta.mode or modality,
            class_scheme=dataset.scheme,
            class_names=class_names(dataset.scheme),
            partition=partition,
            best_epoch=stored.training_meta.epoch,
        )
        if report_path is None:
            out = ctx.obj.get("out")
            report_path = (Path(out) if out else checkpoint.parent) / f"eval_{partition}.json"
        report.write(report_path)
        render_tables([report], console)
        console.print(f"[green]✓[/green] Report written to {report_path}")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("record", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--frequency",
    default="1/30",
    show_default=True,
    help="Labels per second, e.g. 1/20 or 0.05",
)
@click.option("--channel", help="Channel label to read (EDF files)")
@click.option("--output", type=click.Path(path_type=Path), help="Output CSV (default: stdout)")
@click.pass_context
def predict(
    ctx: click.Context,
    checkpoint: Path,
    record: Path,
    frequency: str,
    channel: Optional[str],
    output: Optional[Path],
) -> None:
    """Stage RECORD with CHECKPOINT at an arbitrary segmentation frequency."""
    with _handle_errors("predict"):
        settings = _settings(ctx)
        try:
            rate = Fraction(frequency)
        except (ValueError, ZeroDivisionError):
            raise click.BadParameter(f"{frequency!r} is not a frequency", param_hint="--frequency")
        if rate <= 0:
            raise click.BadParameter("frequency must be positive", param_hint="--frequency")

        stored = read_checkpoint(checkpoint)
        expected = stored.network.samples_per_epoch
        if settings.data.samples_per_epoch != expected:
            raise ConfigError(
                f"Checkpoint expects {expected} samples per epoch, records at "
                f"{settings.data.sample_rate} Hz give {settings.data.samples_per_epoch}",
                {"checkpoint": str(checkpoint), "sample_rate": settings.data.sample_rate},
            )
        signal = resample(load_record(record, channel=channel), settings.data.sample_rate)
        seg = segment_length(signal.sample_rate, rate)
        labels = predict_at_frequency(stored.to_model(), signal, rate)

        names = class_names(_scheme_for(stored.network.n_classes))
        n = len(signal.samples)
        table = pd.DataFrame(
            {
                "index": range(len(labels)),
                "onset_seconds": [k * seg / signal.sample_rate for k in range(len(labels))],
                "duration_seconds": [
                    (min((k + 1) * seg, n) - k * seg) / signal.sample_rate
                    for k in range(len(labels))
                ],
                "class_index": labels,
                "stage": [names[k] for k in labels],
            }
        )
        if output is None:
            click.echo(table.to_csv(index=False), nl=False)
        else:
            output.parent.mkdir(parents=True, exist_ok=True)
            table.to_csv(output, index=False)
            console.print(f"[green]✓[/green] {len(table)} stages written to {output}")


@cli.command(name="export-features")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--data", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Dataset dir"
)
@click.option("--split", "partition", type=PARTITION_CHOICE, default="test", show_default=True)
@click.option("--modality", type=MODALITY_CHOICE, help="Input modality (from the checkpoint)")
@click.option(
    "--baseline",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Baseline checkpoint to compare against (adds the case column)",
)
@click.option("--output", type=click.Path(path_type=Path), required=True, help="Output CSV")
@click.pass_context
def export_features(
    ctx: click.Context,
    checkpoint: Path,
    data: Optional[Path],
    partition: str,
    modality: Optional[str],
    baseline: Optional[Path],
    output: Path,
) -> None:
    """Export bottleneck activations of CHECKPOINT for every window."""
    with _handle_errors("export-features"):
        settings = _settings(ctx)
        stored = read_checkpoint(checkpoint)
        dataset = _load_for_checkpoint(settings, data, stored)
        modality = _modality_for(stored, modality)
        windows = dataset.windows(partition, modality, settings.data.window_epochs)

        table = export_bottleneck_features(
            stored.to_model(), windows, stored.training_meta.mode or "model"
        )
        if baseline is not None:
            other = read_checkpoint(baseline)
            baseline_table = export_bottleneck_features(
                other.to_model(), windows, other.training_meta.mode or "baseline"
            )
            table = compare_cases(table, baseline_table)
        write_feature_table(table, output)
        console.print(f"[green]✓[/green] {len(table)} feature rows written to {output}")


@cli.command()
@click.option(
    "--data", type=click.Path(exists=True, file_okay=False, path_type=Path), help="Dataset dir"
)
@click.option(
    "--scheme",
    "schemes",
    type=SCHEME_CHOICE,
    multiple=True,
    help="Class scheme to run (repeatable; default both)",
)
@click.pass_context
def matrix(ctx: click.Context, data: Optional[Path], schemes: List[str]) -> None:
    """Run every experiment mode for every class scheme and write report.csv."""
    out = _out_dir(ctx)
    with _handle_errors("matrix"):
        settings = _settings(ctx)
        data_dir = _data_dir(settings, data)
        datasets = {
            scheme: load_dataset(data_dir, scheme)
            for scheme in ([StageSchema(s) for s in schemes] or TRAINING_SCHEMES)
        }
        out.mkdir(parents=True, exist_ok=True)
        reports = ExperimentOrchestrator(settings).run_matrix(datasets, out, ctx.obj["force"])
        render_tables(reports, console)


def main() -> None:
    """Main entry point for the CLI."""
    cli(obj={})


if __name__ == "__main__":
    main()
