"""Command-line interface for scene text synthesis."""

import functools
import logging
from pathlib import Path

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from .annotations import ManifestRow
from .appearance.data import load_real_crops, synthetic_real_crops, synthetic_samples
from .appearance.inference import load_recognizer
from .appearance.recognizer import pretrain_recognizer, resolve_alphabet
from .appearance.training import train
from .autodiff.checkpoint import save_checkpoint
from .config import SynthesisConfig, apply_overrides, load_config, parse_override_args, validate_config
from .errors import SceneSynthError
from .pipeline import (
    Resources,
    batch_synthesize,
    collect_training_samples,
    export_region_maps,
    pipeline_inputs,
    validate_inputs,
)
from .text.corpus import load_corpus
from .text.render import load_fonts

console = Console()

# Unknown --key value pairs become configuration overrides
OVERRIDES = {"ignore_unknown_options": True, "allow_extra_args": True}

EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def common_options(func):
    @click.option("--config", "config_path", type=click.Path(path_type=Path), help="Path to synth.yaml")
    @click.option("--seed", type=int, help="Master random seed")
    @click.option("--workers", type=int, help="Parallel worker processes")
    @click.option("--dry-run", is_flag=True, help="Validate configuration and inputs only")
    @click.option("--verbose", "-v", is_flag=True, help="Debug logging")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)

    return wrapper


def _load(ctx, command: str, config_path, seed, workers) -> SynthesisConfig:
    config = load_config(config_path)
    apply_overrides(config, parse_override_args(ctx.args))
    if seed is not None:
        config.seed = seed
    if workers is not None:
        config.workers = workers
    validate_config(config, command)
    return config


def _progress() -> Progress:
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
    )


def _rows_table(title: str, rows: list[ManifestRow], count_label: str) -> Table:
    table = Table(title=title)
    table.add_column("Image", style="cyan")
    table.add_column(count_label, justify="right")
    table.add_column("Classes")
    table.add_column("Status")
    for row in rows:
        status = "[green]ok[/green]" if row.error is None else f"[red]{row.error}[/red]"
        table.add_row(row.stem, str(row.instances), ", ".join(row.classes), status)
    return table


@click.group()
def cli():
    """Scene text synthesis - embed annotated text into background images."""
    pass


@cli.command("synth", context_settings=OVERRIDES)
@common_options
@click.pass_context
def synth(ctx, config_path, seed, workers, dry_run, verbose):
    """Synthesize annotated images for every background/semantic-map pair.

    Any other --key value pair overrides a configuration field, e.g.
    --max_instances 5 or --geometry.max_perturb 0.1.
    """
    _setup_logging(verbose)
    try:
        config = _load(ctx, "synth", config_path, seed, workers)
        if dry_run:
            rows = validate_inputs(config)
            console.print(_rows_table("Input Check", rows, "Instances"))
            bad = [r for r in rows if r.error is not None]
            if bad:
                console.print(f"[yellow]{len(bad)} of {len(rows)} input(s) have problems[/yellow]")
                ctx.exit(EXIT_PARTIAL)
            console.print(f"[green]{len(rows)} input pair(s) OK[/green]")
            return

        total = len(pipeline_inputs(config))
        with _progress() as progress:
            task = progress.add_task("Synthesizing", total=total)
            summary = batch_synthesize(config, on_image=lambda row: progress.advance(task))
    except SceneSynthError as e:
        console.print(f"[red]Error: {e}[/red]")
        ctx.exit(EXIT_FATAL)

    table = Table(title="Synthesis Summary")
    table.add_column("Category", style="cyan")
    table.add_column("Count", justify="right")
    table.add_row("Images", str(len(summary.rows) - len(summary.failures)))
    table.add_row("Text instances", str(summary.instances))
    table.add_row("Failures", str(len(summary.failures)))
    console.print(table)
    for row in summary.failures:
        console.print(f"[yellow]  {row.stem}: {row.error}[/yellow]")
    console.print(f"[green]Output written to {summary.output_dir}[/green]")
    if summary.failures:
        ctx.exit(EXIT_PARTIAL)


@cli.command("train-gan", context_settings=OVERRIDES)
@common_options
@click.pass_context
def train_gan(ctx, config_path, seed, workers, dry_run, verbose):
    """Train the appearance generator against real text crops."""
    _setup_logging(verbose)
    try:
        config = _load(ctx, "train-gan", config_path, seed, workers)
        if dry_run:
            console.print("[green]Configuration OK[/green]")
            return

        gan = config.gan
        rng = np.random.default_rng(config.seed)
        alphabet = resolve_alphabet(config.recognizer.alphabet)
        recognizer = load_recognizer(config.paths.recognizer, alphabet)
        fonts = load_fonts(config.paths.fonts)

        with _progress() as progress:
            if gan.synthetic_data:
                samples = synthetic_samples(rng, gan.samples, gan.size, fonts, alphabet)
                real = synthetic_real_crops(rng, gan.samples, gan.size, fonts, alphabet)
            else:
                resources = Resources(fonts=fonts, corpus=load_corpus(config.paths.corpus))
                task = progress.add_task("Collecting samples", total=gan.samples)
                samples = collect_training_samples(
                    config, resources, rng, gan.samples, gan.size,
                    on_sample=lambda n: progress.update(task, completed=n),
                )
                real = load_real_crops(config.paths.real_crops, gan.size)

            task = progress.add_task("Training", total=gan.iterations)
            out = Path(config.paths.training_output)
            result = train(
                gan,
                samples,
                real,
                recognizer,
                alphabet,
                rng,
                checkpoint_dir=out / "checkpoints",
                log_path=out / "training_log.tsv",
                on_iteration=lambda it, report: progress.advance(task),
            )
    except SceneSynthError as e:
        console.print(f"[red]Error: {e}[/red]")
        ctx.exit(EXIT_FATAL)

    table = Table(title="GAN Training")
    table.add_column("Loss", style="cyan")
    table.add_column("First", justify="right")
    table.add_column("Last", justify="right")
    first, last = result.log[0], result.log[-1]
    for name in ("L_D", "L_G", "L_F", "L_S"):
        table.add_row(name, f"{first[name]:.4f}", f"{last[name]:.4f}")
    if result.distance_start is not None:
        table.add_row("Distance (eval)", f"{result.distance_start:.4f}", f"{result.distance_end:.4f}")
        table.add_row("L_S (eval)", f"{result.semantic_start:.4f}", f"{result.semantic_end:.4f}")
    console.print(table)
    console.print(f"[green]Generator saved to {out / 'checkpoints' / 'generator_last.ckpt'}[/green]")


@cli.command("pretrain-recognizer", context_settings=OVERRIDES)
@common_options
@click.pass_context
def pretrain(ctx, config_path, seed, workers, dry_run, verbose):
    """Pretrain the character recognizer on rendered glyphs."""
    _setup_logging(verbose)
    try:
        config = _load(ctx, "pretrain-recognizer", config_path, seed, workers)
        if dry_run:
            console.print("[green]Configuration OK[/green]")
            return

        settings = config.recognizer
        alphabet = resolve_alphabet(settings.alphabet)
        fonts = load_fonts(config.paths.fonts)
        with _progress() as progress:
            task = progress.add_task("Pretraining", total=settings.epochs)
            recognizer, held_out = pretrain_recognizer(
                fonts,
                alphabet,
                np.random.default_rng(config.seed),
                settings,
                on_epoch=lambda epoch, loss, acc: progress.advance(task),
            )
        path = config.paths.recognizer or Path(config.paths.training_output) / "recognizer.ckpt"
        save_checkpoint(path, recognizer)
    except SceneSynthError as e:
        console.print(f"[red]Error: {e}[/red]")
        ctx.exit(EXIT_FATAL)

    color = "green" if held_out >= settings.target_accuracy else "yellow"
    console.print(f"[{color}]Held-out accuracy {held_out:.1%} on {len(alphabet)} classes[/{color}]")
    console.print(f"[green]Recognizer saved to {path}[/green]")


@cli.command("regions", context_settings=OVERRIDES)
@common_options
@click.pass_context
def regions(ctx, config_path, seed, workers, dry_run, verbose):
    """Dump region maps (and candidate counts when semantic maps are configured)."""
    _setup_logging(verbose)
    try:
        config = _load(ctx, "regions", config_path, seed, workers)
        if dry_run:
            console.print("[green]Configuration OK[/green]")
            return
        rows = export_region_maps(config)
    except SceneSynthError as e:
        console.print(f"[red]Error: {e}[/red]")
        ctx.exit(EXIT_FATAL)

    label = "Candidates" if config.paths.semantic_maps and config.paths.palette else "Regions"
    console.print(_rows_table("Region Detection", rows, label))
    console.print(f"[green]Region maps written to {Path(config.paths.output) / 'regions'}[/green]")
    if any(r.error is not None for r in rows):
        ctx.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    cli()
