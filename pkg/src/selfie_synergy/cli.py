"""
Command-line interface for Selfie Synergy
"""
import functools
import sys
from pathlib import Path
from typing import Optional, Tuple

import click

from . import __version__
from . import pipeline
from .artifacts import ArtifactStore
from .config import Config
from .dataset import generate_synthetic_dataset
from .errors import (ConfigError, ManifestError, MissingArtifactError, SelfieSynergyError,
                     TrainingDivergedError)
from .imaging import load_gray
from .keypoints import detect_keypoints, keypoints_to_csv

EXIT_CODES = (
    (ConfigError, 2),
    (ManifestError, 2),
    (MissingArtifactError, 3),
    (TrainingDivergedError, 4),
)


def exit_code_for(error: SelfieSynergyError) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return 1


def reports_errors(command):
    """Turn package errors into an ``Error:`` line and the mapped exit code"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SelfieSynergyError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(exit_code_for(e))
    return wrapper


class Context:
    """Config and store shared by every subcommand"""

    def __init__(self, config_path: Optional[str], store: Optional[str], seed: Optional[int],
                 manifest: Optional[str], workers: Optional[int]):
        self.config_path = config_path
        self.overrides = {"store": store, "data.manifest": manifest, "workers": workers}
        self.seed = seed
        self._config: Optional[Config] = None

    @property
    def config(self) -> Config:
        if self._config is None:
            config = Config(self.config_path)
            for key, value in self.overrides.items():
                if value is not None:
                    config.set(key, value, announce=False)
            if self.seed is not None:
                config.set_seed(self.seed)
            self._config = config
        return self._config

    @property
    def store(self) -> ArtifactStore:
        return ArtifactStore(self.config.get("store"))

    def ready(self) -> Tuple[Config, ArtifactStore]:
        """Validated config and its store"""
        self.config.validate()
        return self.config, self.store


pass_context = click.make_pass_decorator(Context)


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML configuration file")
@click.option("--store", type=click.Path(file_okay=False), help="Artifact store directory")
@click.option("--seed", type=click.IntRange(min=0), help="Seed for every seeded stage")
@click.option("--manifest", type=click.Path(dir_okay=False), help="Dataset manifest (TSV)")
@click.option("--workers", type=click.IntRange(min=1), help="Worker processes for per-image stages")
@click.pass_context
def cli(ctx: click.Context, config_path: str, store: str, seed: int, manifest: str, workers: int):
    """Selfie Synergy - selfie detection with a synergy-constrained network"""
    ctx.obj = Context(config_path, store, seed, manifest, workers)


@cli.command("gen-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--n-per-class", default=400, show_default=True, type=int, help="Images per class")
@click.option("--size", default=227, show_default=True, type=int, help="Image side in pixels")
@pass_context
@reports_errors
def gen_synthetic(obj: Context, out_dir: str, n_per_class: int, size: int):
    """Write a balanced synthetic selfie dataset"""
    seed = obj.seed if obj.seed is not None else 0
    generate_synthetic_dataset(n_per_class, seed, out_dir, size)
    click.echo(f"ℹ️ Manifest: {Path(out_dir) / 'manifest.tsv'}")


def _stage_command(name: str, stage: str, help_text: str):
    @pass_context
    @reports_errors
    def command(obj: Context):
        getattr(pipeline, stage)(*obj.ready())
    command.__doc__ = help_text
    return cli.command(name)(command)


_stage_command("split", "run_stage_split", "Assign stratified train/val/test tags")
_stage_command("features", "run_stage_features", "Extract HOG and LBP descriptors")
_stage_command("fit-cca", "run_stage_cca", "Fit PCA/CCA and compute synergy targets")
_stage_command("train-net", "run_stage_train", "Train the synergy-constrained network")
_stage_command("descriptors", "run_stage_descriptors", "Pool conv maps at DoG keypoints")
_stage_command("train-svm", "run_stage_svm", "Train the linear SVM on descriptors")
_stage_command("eval", "run_stage_eval", "Evaluate on the test split")


@cli.command()
@click.option("--kind", type=click.Choice(["synergy", "unconstrained"]), default="synergy",
              show_default=True, help="Which baseline to run")
@pass_context
@reports_errors
def baseline(obj: Context, kind: str):
    """Run a comparison baseline"""
    config, store = obj.ready()
    if kind == "synergy":
        pipeline.run_baseline_synergy_svm(config, store)
    else:
        pipeline.run_baseline_unconstrained(config, store)


@cli.command()
@click.option("--masked-manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Manifest whose third column holds the rects to zero")
@click.option("--model", type=click.Choice(["constrained", "unconstrained"]), default="constrained",
              show_default=True, help="Which trained network to ablate")
@pass_context
@reports_errors
def ablate(obj: Context, masked_manifest: str, model: str):
    """Re-evaluate test images with annotated regions removed"""
    pipeline.run_ablation(*obj.ready(), masked_manifest, model)


@cli.command()
@click.option("--image-id", "image_ids", multiple=True, required=True, help="Image id (repeatable)")
@click.option("--layer", required=True, type=int, help="Conv layer, starting at 1")
@click.option("--filter", "filters", multiple=True, required=True, type=int, help="Filter index (repeatable)")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory")
@click.option("--model", type=click.Choice(["constrained", "unconstrained"]), default="constrained",
              show_default=True, help="Which trained network to render")
@pass_context
@reports_errors
def heatmaps(obj: Context, image_ids: Tuple[str], layer: int, filters: Tuple[int], out_dir: str, model: str):
    """Export conv activation heat maps as PGM images"""
    pipeline.export_heatmaps(*obj.ready(), list(image_ids), layer, list(filters), out_dir, model)


@cli.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="CSV output path")
@pass_context
@reports_errors
def keypoints(obj: Context, image: str, out: str):
    """Detect DoG keypoints on one image and write them as CSV"""
    config = obj.config
    detection = detect_keypoints(load_gray(image, config.get("image_size")), config.dog_config())
    keypoints_to_csv(detection.keypoints, out)
    if detection.fallback:
        click.echo("⚠️ No extrema found; wrote the fallback grid")
    click.echo(f"✓ Wrote {len(detection.keypoints)} keypoints to {out}")


@cli.command("run-all")
@click.option("--with-unconstrained", is_flag=True, help="Also train and evaluate the unconstrained network")
@pass_context
@reports_errors
def run_all(obj: Context, with_unconstrained: bool):
    """Run every stage, reusing cached artifacts"""
    config, store = obj.ready()
    pipeline.run_all(config, store, unconstrained=with_unconstrained)
    click.echo("\n✅ Pipeline complete")


@cli.command("show-config")
@click.option("--save", "save_path", type=click.Path(dir_okay=False), help="Write the effective configuration")
@pass_context
@reports_errors
def show_config(obj: Context, save_path: str):
    """Print the effective configuration"""
    config = obj.config
    for key, value in sorted(config.get_all().items()):
        click.echo(f"{key}: {value}")
    if save_path:
        config.save(save_path)


def main():
    """Main entry point for the CLI"""
    cli()
