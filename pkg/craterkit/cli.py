# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""The ``craterkit`` command line.

Global options go before the subcommand and any setting can be
overridden after it, either with ``--set section.key=value`` up front
or with a ``--section.key value`` flag on the subcommand::

  craterkit --config crater.toml --jobs 4 prepare-aerial photos/ --out tiles/ --tiling.overlap 96
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import typer

from . import __version__
from .components import CommandInjector, default_components
from .config import load_config
from .errors import CraterkitError, ValidationError
from .evaluate import render_report
from .log import configure_logging
from .pipeline import (
    cmd_annotate_transfer, cmd_detect, cmd_ensemble, cmd_eval, cmd_experiment, cmd_overlay, cmd_prepare_aerial,
    cmd_prepare_moon, cmd_split, cmd_synthgen, cmd_translate
)
from .raster import PixelRect

LOGGER = logging.getLogger(__name__)

#: Subcommands accept unknown ``--section.key`` flags as overrides.
OVERRIDABLE = {"allow_extra_args": True, "ignore_unknown_options": True}

app = typer.Typer(
    help="Bomb crater detection with lunar domain adaptation.",
    no_args_is_help=True,
    add_completion=False,
)


class Options(NamedTuple):
    config: Optional[Path]
    overrides: Sequence[str]
    jobs: Optional[int]
    log_level: Optional[str]


def _print_version(value: bool) -> None:
    if value:
        typer.echo(f"craterkit {__version__}")
        raise typer.Exit()


VERSION = typer.Option(None, "--version", callback=_print_version, is_eager=True, help="Show the version and exit.")


def parse_overrides(pairs: Sequence[str], extra: Sequence[str] = ()) -> Dict[str, str]:
    """Turn ``section.key=value`` pairs and ``--section.key value``
    flags into a dictionary of dotted-path overrides.

    Raises:
      ValidationError: On malformed overrides.
    """
    overrides = {}
    for pair in pairs:
        path, sep, value = pair.partition("=")
        if not sep or "." not in path:
            raise ValidationError({"overrides": f"expected section.key=value but found {pair!r}"})
        overrides[path.strip()] = value

    tokens = list(extra)
    while tokens:
        token = tokens.pop(0)
        if not token.startswith("--") or "." not in token:
            raise ValidationError({"overrides": f"unexpected argument {token!r}"})

        path, sep, value = token[2:].partition("=")
        if not sep:
            if not tokens:
                raise ValidationError({"overrides": f"flag {token!r} needs a value"})
            value = tokens.pop(0)
        overrides[path] = value
    return overrides


def run(ctx: typer.Context, command: Callable[..., Any], **params: Any) -> Any:
    """Load the configuration and run a pipeline command with its
    dependencies resolved.  Errors are logged on a single line and
    turn into exit status 1.
    """
    options: Options = ctx.obj or Options(None, (), None, None)
    configure_logging(options.log_level or "INFO")
    try:
        overrides: Dict[str, Any] = parse_overrides(options.overrides, ctx.args)
        if options.jobs is not None:
            overrides["pipeline.jobs"] = options.jobs
        if options.log_level is not None:
            overrides["pipeline.log_level"] = options.log_level.upper()

        config = load_config(str(options.config) if options.config else None, overrides)
        configure_logging(config.pipeline.log_level)

        injector = CommandInjector(default_components(config))
        try:
            return injector.get_resolver().resolve(command)(**params)
        finally:
            injector.close()
    except (CraterkitError, OSError) as e:
        LOGGER.error("%s", e)
        raise typer.Exit(1)


def parse_roi(value: Optional[str]) -> Optional[PixelRect]:
    if value is None:
        return None

    try:
        x, y, w, h = (int(part, 10) for part in value.split(","))
    except ValueError:
        raise typer.BadParameter(f"expected x,y,w,h but found {value!r}")
    return PixelRect(x, y, w, h)


def parse_named_paths(values: Sequence[str]) -> List[Tuple[str, Path]]:
    pairs = []
    for value in values:
        name, sep, path = value.partition("=")
        if not sep or not name or not path:
            raise typer.BadParameter(f"expected name=path but found {value!r}")
        pairs.append((name, Path(path)))
    return pairs


@app.callback()
def main_options(
        ctx: typer.Context,
        config: Optional[Path] = typer.Option(None, "--config", "-c", help="A TOML configuration file."),
        overrides: List[str] = typer.Option([], "--set", "-s", help="Override a setting: section.key=value."),
        jobs: Optional[int] = typer.Option(None, "--jobs", "-j", min=1, help="Images processed concurrently."),
        log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
        version: Optional[bool] = VERSION,
) -> None:
    ctx.obj = Options(config, overrides, jobs, log_level)


@app.command("prepare-moon", context_settings=OVERRIDABLE)
def prepare_moon(
        ctx: typer.Context,
        mosaic: Path = typer.Argument(..., exists=True, dir_okay=False, help="The global moon mosaic."),
        catalog: Path = typer.Argument(..., exists=True, dir_okay=False, help="The crater catalog."),
        out: Path = typer.Option(..., "--out", "-o", help="Where tiles and labels go."),
        version: Optional[bool] = VERSION,
) -> None:
    """Tile a moon mosaic and project catalog craters onto the tiles."""
    manifest = run(ctx, cmd_prepare_moon, mosaic=mosaic, catalog=catalog, out=out)
    typer.echo(f"{len(manifest)} tiles written to {out}")


@app.command("prepare-aerial", context_settings=OVERRIDABLE)
def prepare_aerial(
        ctx: typer.Context,
        images: Path = typer.Argument(..., exists=True, help="An aerial image or a directory of them."),
        out: Path = typer.Option(..., "--out", "-o", help="Where tiles and labels go."),
        labels: Optional[Path] = typer.Option(None, "--labels", file_okay=False, help="A directory of label files."),
        roi: Optional[str] = typer.Option(None, "--roi", help="The region to keep: x,y,w,h."),
        version: Optional[bool] = VERSION,
) -> None:
    """Crop, enhance and tile aerial images and their labels."""
    manifest = run(ctx, cmd_prepare_aerial, images=images, out=out, labels=labels, roi=parse_roi(roi))
    typer.echo(f"{len(manifest)} tiles written to {out}")


@app.command("split", context_settings=OVERRIDABLE)
def split(
        ctx: typer.Context,
        manifest: Path = typer.Argument(..., exists=True, dir_okay=False),
        out: Path = typer.Option(..., "--out", "-o", help="The split manifest."),
        version: Optional[bool] = VERSION,
) -> None:
    """Split a manifest into train, val and test by group."""
    result = run(ctx, cmd_split, manifest=manifest, out=out)
    typer.echo(" ".join(f"{name}={len(result.split(name))}" for name in ("train", "val", "test")))


@app.command("translate", context_settings=OVERRIDABLE)
def translate(
        ctx: typer.Context,
        source: Path = typer.Argument(..., exists=True, file_okay=False, help="Prepared moon tiles."),
        target: Path = typer.Argument(..., exists=True, help="Aerial tiles or an aerial manifest."),
        out: Path = typer.Option(..., "--out", "-o", help="Where translated tiles go."),
        version: Optional[bool] = VERSION,
) -> None:
    """Translate moon tiles into the aerial domain."""
    outputs = run(ctx, cmd_translate, source=source, target=target, out=out)
    typer.echo(f"{len(outputs)} tiles translated into {out}")


@app.command("annotate-transfer", context_settings=OVERRIDABLE)
def annotate_transfer(
        ctx: typer.Context,
        source: Path = typer.Argument(..., exists=True, file_okay=False, help="The untranslated tiles."),
        translated: Path = typer.Argument(..., exists=True, file_okay=False, help="The translated tiles."),
        version: Optional[bool] = VERSION,
) -> None:
    """Copy labels from source tiles onto their translations."""
    written = run(ctx, cmd_annotate_transfer, source=source, translated=translated)
    typer.echo(f"{written} label files written")


@app.command("detect", context_settings=OVERRIDABLE)
def detect(
        ctx: typer.Context,
        images: Path = typer.Argument(..., exists=True, file_okay=False),
        out: Path = typer.Option(..., "--out", "-o", help="Where detection files go."),
        stitch: bool = typer.Option(False, "--stitch", help="Stitch tile detections into their parents."),
        model: Optional[str] = typer.Option(None, "--model", help="Substituted for {model} in the command."),
        version: Optional[bool] = VERSION,
) -> None:
    """Detect craters in a directory of images."""
    paths = run(ctx, cmd_detect, images=images, out=out, stitch=stitch, model=model)
    typer.echo(f"{len(paths)} detection files written to {out}")


@app.command("eval", context_settings=OVERRIDABLE)
def evaluate(
        ctx: typer.Context,
        gt: Path = typer.Argument(..., exists=True, help="Labelled images or a manifest."),
        detections: Path = typer.Argument(..., exists=True, file_okay=False),
        model_name: str = typer.Option("model", "--name", help="The model's column in the report."),
        split_name: str = typer.Option("test", "--split", help="The manifest split to evaluate."),
        out: Optional[Path] = typer.Option(None, "--out", "-o", help="Also write the report as CSV."),
        version: Optional[bool] = VERSION,
) -> None:
    """Evaluate detections against ground truth."""
    report = run(ctx, cmd_eval, gt=gt, detections=detections, model_name=model_name, split=split_name, out=out)
    typer.echo(render_report([report]), nl=False)


@app.command("ensemble", context_settings=OVERRIDABLE)
def ensemble(
        ctx: typer.Context,
        inputs: List[Path] = typer.Argument(..., exists=True, file_okay=False, help="One directory per model."),
        out: Path = typer.Option(..., "--out", "-o", help="Where fused detections go."),
        images: Optional[Path] = typer.Option(None, "--images", file_okay=False,
                                              help="Images with .affine sidecars to deduplicate on the ground."),
        version: Optional[bool] = VERSION,
) -> None:
    """Fuse the detections of several models."""
    paths = run(ctx, cmd_ensemble, inputs=inputs, out=out, images=images)
    typer.echo(f"{len(paths)} fused detection files written to {out}")


@app.command("experiment", context_settings=OVERRIDABLE)
def experiment(
        ctx: typer.Context,
        bomb: Path = typer.Argument(..., exists=True, dir_okay=False, help="The split aerial manifest."),
        out: Path = typer.Option(..., "--out", "-o", help="Where exports, detections and reports go."),
        moon: Optional[Path] = typer.Option(None, "--moon", exists=True, dir_okay=False),
        synthetic: Optional[Path] = typer.Option(None, "--synthetic", exists=True, dir_okay=False),
        compositions: List[str] = typer.Option(
            ["bomb", "moon", "synthetic", "combined"], "--composition", help="The compositions to compare.",
        ),
        version: Optional[bool] = VERSION,
) -> None:
    """Compare the bomb, moon, synthetic and combined training sets."""
    reports = run(ctx, cmd_experiment, bomb=bomb, out=out, moon=moon, synthetic=synthetic,
                  compositions=compositions)
    typer.echo(render_report(reports), nl=False)


@app.command("overlay", context_settings=OVERRIDABLE)
def overlay(
        ctx: typer.Context,
        image: Path = typer.Argument(..., exists=True, dir_okay=False),
        detections: List[str] = typer.Option(..., "--detections", "-d", help="A model's detections: name=path."),
        out: Path = typer.Option(..., "--out", "-o", help="The annotated image."),
        version: Optional[bool] = VERSION,
) -> None:
    """Draw the detections of several models onto an image."""
    run(ctx, cmd_overlay, image=image, detections=parse_named_paths(detections), out=out)
    typer.echo(f"wrote {out}")


@app.command("synthgen", context_settings=OVERRIDABLE)
def synthgen(
        ctx: typer.Context,
        out: Path = typer.Option(..., "--out", "-o", help="Where scenes and labels go."),
        version: Optional[bool] = VERSION,
) -> None:
    """Render synthetic crater scenes with exact labels."""
    paths = run(ctx, cmd_synthgen, out=out)
    typer.echo(f"{len(paths)} scenes written to {out}")


def main() -> None:
    app(prog_name="craterkit")
