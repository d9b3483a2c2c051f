"""
Command-line interface for drive-sscl.
"""

import csv
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO

import typer

try:  # typer >= 0.26 vendors its own click; catch the exceptions it raises
    import typer._click as click
except ImportError:  # pragma: no cover - older typer uses upstream click
    import click
from pydantic import ValidationError
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .core.synth import ScenarioKind
from .evaluation.benchmark import SweepConfig
from .exceptions import ConfigurationError, DriveSSCLError
from .models import APConvention, LearningMode, Readout, RunConfig
from .pipeline import DriveSceneProcessor
from .utils.config_io import load_run_config
from .utils.serialization import save_embeddings

app = typer.Typer(
    name="drive-sscl",
    help="Ego-vehicle action recognition from tracked objects with semi-supervised contrastive learning",
    no_args_is_help=True,
)
# stdout is reserved for ``--out -`` tables
console = Console(stderr=True)

ConfigOption = typer.Option(None, "--config", "-c", help="TOML run configuration")
SeedOption = typer.Option(None, "--seed", help="Random seed (overrides [train] seed)")
ThreadsOption = typer.Option(None, "--threads", "-j", min=1, help="Worker threads (default: all cores)")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Verbose output")


def _overrides(**sections: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    return {name: {k: v for k, v in values.items() if v is not None} for name, values in sections.items()}


def _processor(
    config: Optional[Path],
    threads: Optional[int],
    verbose: bool,
    seed: Optional[int] = None,
    **sections: Dict[str, Any],
) -> DriveSceneProcessor:
    if verbose:
        from .utils.logger import setup_logging
        setup_logging("DEBUG")
    seeded = {"train": {"seed": seed}, "augment": {"seed": seed}}
    for name, values in sections.items():
        seeded.setdefault(name, {}).update(values)
    run_config: RunConfig = load_run_config(config, _overrides(**seeded))
    return DriveSceneProcessor(run_config, threads=threads)


@contextmanager
def _handle_errors(verbose: bool) -> Iterator[None]:
    try:
        yield
    except DriveSSCLError as e:
        console.print(f"[red]Error: {e}[/red]")
        raise typer.Exit(1)
    except (typer.Exit, click.exceptions.ClickException):
        raise
    except Exception as e:
        console.print(f"[red]Unexpected error: {e}[/red]")
        if verbose:
            console.print_exception()
        raise typer.Exit(1)


@contextmanager
def _output(out: Path) -> Iterator[TextIO]:
    """Open ``out`` for CSV writing; ``-`` means stdout."""
    if str(out) == "-":
        yield sys.stdout
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        yield fh


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", "-o", help="Output directory for tracks, lanes and manifest"),
    classes: int = typer.Option(5, "--classes", min=1, max=len(ScenarioKind), help="Number of labeled scenario kinds"),
    per_class: int = typer.Option(50, "--per-class", min=1, help="Training clips per class"),
    labeled_fraction: float = typer.Option(1.0, "--labeled-fraction", min=0.0, max=1.0, help="Fraction of training clips that keep their label"),
    out_of_class: int = typer.Option(0, "--out-of-class", min=0, help="Extra unlabeled clips of the remaining kinds"),
    val_per_class: int = typer.Option(10, "--val-per-class", min=0, help="Validation clips per class"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Generate a synthetic benchmark in the ingest file formats.

    Example:
        drive-sscl synth --out data/ --seed 7 --labeled-fraction 0.1 --out-of-class 150
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose, seed)
        manifest = processor.synthesize(
            out,
            seed=processor.config.seed,
            kinds=list(ScenarioKind)[:classes],
            clips_per_class=per_class,
            labeled_fraction=labeled_fraction,
            out_of_class=out_of_class,
            validation_per_class=val_per_class,
        )
        console.print(f"[green]✓ Synthetic data written; manifest: [blue]{manifest}[/blue][/green]")


@app.command()
def ingest(
    tracks: Path = typer.Option(..., "--tracks", "-t", help="Tracking CSV of one recording"),
    out: Path = typer.Option(..., "--out", "-o", help="Manifest CSV to write"),
    lanes: Optional[Path] = typer.Option(None, "--lanes", "-l", help="Lane JSON of the recording"),
    label: Optional[str] = typer.Option(None, "--label", help="Class name applied to every clip"),
    split: str = typer.Option("train", "--split", help="Split tag written to the manifest (train|val)"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Slice a recording into fixed-length clips and write their manifest.

    Example:
        drive-sscl ingest --tracks rec01.csv --lanes rec01.json --out manifest.csv
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose)
        records = processor.ingest(tracks, out, lanes, label, split)
        console.print(f"[green]✓ {len(records)} clips written to [blue]{out}[/blue][/green]")


@app.command()
def graph(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV"),
    out: Path = typer.Option(..., "--out", "-o", help="Directory for one .npz graph per clip"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Build the ST-graph of every manifest clip.

    Example:
        drive-sscl graph --manifest data/manifest.csv --out graphs/
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose)
        graphs = processor.build_graphs(manifest, out)
        table = Table(title="ST-graphs")
        table.add_column("Clips", justify="right", style="cyan")
        table.add_column("Nodes", justify="right", style="green")
        table.add_column("Edges", justify="right", style="green")
        table.add_row(
            str(len(graphs)),
            str(sum(g.num_nodes for g in graphs)),
            str(sum(g.num_edges for g in graphs)),
        )
        console.print(table)


@app.command()
def dist(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV"),
    out: Path = typer.Option(..., "--out", "-o", help="CSV output ('-' for stdout)"),
    pairs: bool = typer.Option(False, "--pairs", help="Long format: clip_a, clip_b, distance"),
    split: Optional[str] = typer.Option(None, "--split", help="Restrict to one split"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Pairwise SOIA distance matrix of the manifest clips.

    Example:
        drive-sscl dist --manifest data/manifest.csv --out D.csv
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose)
        matrix = processor.distance_matrix(manifest, split)
        ids = matrix.clip_ids
        with _output(out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if pairs:
                writer.writerow(["clip_a", "clip_b", "distance"])
                for i in range(len(ids)):
                    for j in range(i + 1, len(ids)):
                        writer.writerow([ids[i], ids[j], repr(float(matrix.values[i, j]))])
            else:
                writer.writerow(["clip_id"] + ids)
                for i, row in enumerate(matrix.values):
                    writer.writerow([ids[i]] + [repr(float(v)) for v in row])


@app.command()
def train(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV (train and val splits)"),
    out: Path = typer.Option(..., "--out", "-o", help="Checkpoint .npz to write"),
    mode: Optional[LearningMode] = typer.Option(None, "--mode", help="Learning mode"),
    metrics: Optional[Path] = typer.Option(None, "--metrics", help="JSON Lines metrics log"),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1, help="Training epochs"),
    batch_size: Optional[int] = typer.Option(None, "--batch-size", min=2, help="Batch size"),
    lr: Optional[float] = typer.Option(None, "--lr", help="Initial learning rate"),
    unlabeled_weight: Optional[float] = typer.Option(None, "--unlabeled-weight", help="Loss weight of unlabeled anchors, in (0, 1]"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Train the GCN and write a checkpoint.

    Example:
        drive-sscl train --mode scl --config run.toml --manifest data/manifest.csv --out model.npz
    """
    with _handle_errors(verbose):
        processor = _processor(
            config,
            threads,
            verbose,
            seed,
            train={
                "mode": mode,
                "epochs": epochs,
                "batch_size": batch_size,
                "lr_init": lr,
                "unlabeled_weight": unlabeled_weight,
            },
        )
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task(f"Training ({processor.config.train.mode.value})...", total=None)
            result = processor.train(manifest, out, metrics)

        table = Table(title="Training")
        table.add_column("Epoch", justify="right", style="cyan")
        table.add_column("Loss", justify="right", style="green")
        table.add_column("Val mAP", justify="right")
        for record in result.history[-5:]:
            table.add_row(
                str(record.epoch),
                f"{record.loss:.4f}",
                "-" if record.val_map is None else f"{record.val_map:.4f}",
            )
        console.print(table)
        console.print(f"[green]✓ Checkpoint saved to [blue]{out}[/blue][/green]")


@app.command()
def embed(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Trained checkpoint"),
    out: Path = typer.Option(..., "--out", "-o", help="Embeddings .npz to write"),
    split: Optional[str] = typer.Option(None, "--split", help="Restrict to one split"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Embed every manifest clip with a trained checkpoint.

    Example:
        drive-sscl embed --manifest data/manifest.csv --checkpoint model.npz --out Z.npz
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose)
        ids, z = processor.embed(manifest, checkpoint, split)
        save_embeddings(out, ids, z)
        console.print(f"[green]✓ {len(ids)} embeddings written to [blue]{out}[/blue][/green]")


@app.command()
def retrieve(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Trained checkpoint"),
    out: Path = typer.Option(..., "--out", "-o", help="Ranked report CSV ('-' for stdout)"),
    top_k: Optional[int] = typer.Option(None, "--top-k", min=1, help="Neighbours per query"),
    unlabeled_only: bool = typer.Option(False, "--unlabeled-only", help="Query with unlabeled val clips only"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Nearest training clips of each validation clip in embedding space.

    Example:
        drive-sscl retrieve --manifest data/manifest.csv --checkpoint model.npz --out hits.csv
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose, eval={"top_k": top_k})
        results = processor.retrieve(manifest, checkpoint, top_k, unlabeled_only)
        with _output(out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["query_id", "rank", "clip_id", "cosine", "soia_distance"])
            for result in results:
                for rank, hit in enumerate(result.hits, start=1):
                    writer.writerow(
                        [
                            result.query_id,
                            rank,
                            hit.clip_id,
                            repr(hit.similarity),
                            "" if hit.soia_distance is None else repr(hit.soia_distance),
                        ]
                    )


@app.command("eval")
def evaluate(
    manifest: Path = typer.Option(..., "--manifest", "-m", help="Clip manifest CSV"),
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="Trained checkpoint"),
    out: Path = typer.Option(..., "--out", "-o", help="Per-class AP CSV ('-' for stdout)"),
    mode: Optional[LearningMode] = typer.Option(None, "--mode", help="Mode the checkpoint was trained in (picks the readout)"),
    readout: Optional[Readout] = typer.Option(None, "--readout", help="Class-score readout"),
    ap_convention: Optional[APConvention] = typer.Option(None, "--ap-convention", help="PR-curve integration"),
    config: Optional[Path] = ConfigOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Per-class average precision and mAP on labeled validation clips.

    Example:
        drive-sscl eval --manifest data/manifest.csv --checkpoint model.npz --out ap.csv
    """
    with _handle_errors(verbose):
        processor = _processor(
            config,
            threads,
            verbose,
            train={"mode": mode},
            eval={"readout": readout, "ap_convention": ap_convention},
        )
        report = processor.evaluate(manifest, checkpoint, mode)
        with _output(out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "ap", "positives"])
            for row in report.classes:
                writer.writerow([row.class_name, "" if row.ap is None else f"{row.ap:.6f}", row.positives])
            writer.writerow(["overall", f"{report.mean_ap:.6f}", sum(r.positives for r in report.classes)])
        _display_report(report)


@app.command()
def bench(
    out: Path = typer.Option(..., "--out", "-o", help="Per-run CSV ('-' for stdout)"),
    classes: int = typer.Option(5, "--classes", min=1, max=len(ScenarioKind), help="Number of labeled scenario kinds"),
    per_class: int = typer.Option(50, "--per-class", min=1, help="Training clips per class"),
    out_of_class: int = typer.Option(150, "--out-of-class", min=0, help="Extra unlabeled clips of the remaining kinds"),
    val_per_class: int = typer.Option(10, "--val-per-class", min=1, help="Validation clips per class"),
    fractions: Optional[List[float]] = typer.Option(None, "--fraction", help="Labeled fraction (repeatable; default 1.0, 0.5, 0.1)"),
    seeds: int = typer.Option(5, "--seeds", min=1, help="Number of seeds, starting at --seed"),
    required: Optional[int] = typer.Option(None, "--required", min=1, help="Seeds each comparison must hold for"),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    threads: Optional[int] = ThreadsOption,
    verbose: bool = VerboseOption,
):
    """
    Compare SCL, UNSUP and FSL over a seed sweep of synthetic benchmarks.

    Example:
        drive-sscl bench --config run.toml --out sweep.csv
    """
    with _handle_errors(verbose):
        processor = _processor(config, threads, verbose)
        first = processor.config.seed if seed is None else seed
        try:
            sweep = SweepConfig(
                kinds=list(ScenarioKind)[:classes],
                clips_per_class=per_class,
                out_of_class=out_of_class,
                validation_per_class=val_per_class,
                labeled_fractions=fractions or [1.0, 0.5, 0.1],
                seeds=list(range(first, first + seeds)),
                required_seeds=required,
            )
        except ValidationError as e:
            raise ConfigurationError(f"Invalid sweep: {e}") from e
        report = processor.compare_modes(sweep)
        with _output(out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["seed", "labeled_fraction", "mode", "map", "top1_soia"])
            for run in report.runs:
                writer.writerow(
                    [
                        run.seed,
                        repr(run.labeled_fraction),
                        run.mode.value,
                        f"{run.mean_ap:.6f}",
                        "" if run.top1_soia is None else repr(run.top1_soia),
                    ]
                )
        table = Table(title=f"Mode comparison ({sweep.seeds_needed} of {len(sweep.seeds)} seeds needed)")
        table.add_column("Comparison", style="cyan")
        table.add_column("Seeds", justify="right")
        table.add_column("Result")
        counts = report.seed_counts()
        for name, ok in report.checks().items():
            table.add_row(name, str(counts[name]), "[green]holds[/green]" if ok else "[red]fails[/red]")
        console.print(table)


def _display_report(report) -> None:
    """Display the AP table on the console."""
    table = Table(title=f"Average precision ({report.readout.value} readout)")
    table.add_column("Class", style="cyan")
    table.add_column("AP", justify="right", style="green")
    table.add_column("Positives", justify="right")
    for row in report.classes:
        table.add_row(row.class_name, "-" if row.ap is None else f"{100 * row.ap:.1f}", str(row.positives))
    table.add_row("[bold]Overall mAP[/bold]", f"[bold]{100 * report.mean_ap:.1f}[/bold]", "")
    console.print(table)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code (0 ok, 1 failure, 2 usage)."""
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        # non-standalone click returns the exit code of typer.Exit / --help
        rv = app(args=args, prog_name="drive-sscl", standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        return 2
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except DriveSSCLError as e:
        console.print(f"[red]Error: {e}[/red]")
        return 1
    return rv if isinstance(rv, int) else 0


def main():
    """Main entry point for the CLI."""
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
