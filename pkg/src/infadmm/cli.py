"""``infadmm`` command line.

Every verb reads one TOML config; ``--seed`` and ``--out`` override the
config's ``seed`` and ``out``. The options work before or after the verb.
"""
import functools
import json
import os
import sys

import click

from . import experiments
from .config import ConfigError, load_config
from .iadn import IadnFormatError


def _common(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="TOML experiment config.")
    @click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Override the config seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, config_path, seed, out, **kwargs):
        root = ctx.find_root().params
        config_path = config_path or root.get("config_path")
        seed = seed if seed is not None else root.get("seed")
        out = out or root.get("out")
        if config_path is None:
            raise click.UsageError("--config is required")
        try:
            cfg = load_config(config_path)
        except ConfigError as exc:
            raise click.ClickException(str(exc)) from exc
        if seed is not None:
            cfg.seed = seed
        out = out or cfg.out
        os.makedirs(out, exist_ok=True)
        try:
            summary = fn(cfg, out, **kwargs)
        except (ConfigError, IadnFormatError, experiments.MissingInputError, ValueError, TypeError) as exc:
            raise click.ClickException(str(exc)) from exc
        click.echo(json.dumps(summary, sort_keys=True, default=float))
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML experiment config.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
def main(config_path, seed, out):
    """Inner-loop-free ADMM experiments."""


@main.command("train-inverter")
@_common
def train_inverter(cfg, out):
    """Fit the symmetric net replacing (beta I + A A^T)^-1."""
    return experiments.cmd_train_inverter(cfg, out)


@main.command("train-denoiser")
@_common
def train_denoiser(cfg, out):
    """Fit the conditional denoiser on the toy dataset."""
    return experiments.cmd_train_denoiser(cfg, out)


@main.command("synthetic-benchmark")
@_common
def synthetic_benchmark(cfg, out):
    """Laplace-prior instance under each z-solver; writes trajectory_<name>.csv."""
    return experiments.cmd_synthetic_benchmark(cfg, out)


@main.command("beta-sweep")
@click.option("--betas", default=None, help="Comma-separated beta values (overrides sweep.betas).")
@_common
def beta_sweep(cfg, out, betas):
    """Toy super-resolution for several beta values; writes beta_sweep.csv."""
    values = None
    if betas is not None:
        try:
            values = [float(b) for b in betas.split(",") if b.strip()]
        except ValueError as exc:
            raise click.BadParameter(f"cannot parse {betas!r}", param_hint="--betas") from exc
    return experiments.cmd_beta_sweep(cfg, out, values)


@main.command("toy-superres")
@_common
def toy_superres(cfg, out):
    """Full learned pipeline on held-out images; writes metrics.csv."""
    return experiments.cmd_toy_superres(cfg, out)


@main.command("calibrate")
@_common
def calibrate(cfg, out):
    """Estimate the blur kernel from pairs; writes kernel.iadn and calibration.csv."""
    return experiments.cmd_calibrate(cfg, out)


@main.command("make-dataset")
@_common
def make_dataset(cfg, out):
    """Generate the procedural toy image set as toy.iadn."""
    return experiments.cmd_make_dataset(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
