# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Image-to-image translation between the moon and aerial domains.

Translators must preserve geometry: every output image has the same
stem and dimensions as its input, which lets labels carry over as-is.
Two translators are provided:

* :class:`HistogramMatchingTranslator` maps source tiles onto a pooled
  target histogram with a single global tone curve.
* :class:`ExternalTranslator` runs an external command (for example a
  trained cycleGAN generator) over a directory of tiles.
"""

import logging
from bisect import bisect_left
from pathlib import Path
from typing import Any, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from PIL import Image
from typing_extensions import Protocol

from .annotate import load_labels, save_labels, transfer_annotations
from .errors import DimensionDrift, DimensionMismatch, EmptyHistogram, InvalidParameter, MissingOutputs
from .external import require_placeholders, run_command
from .files import find_image, list_images
from .raster import LEVELS, Histogram, Raster, histogram, read_png, require_same_dims, write_png

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TransferFunction:
    """A monotone 256-entry gray-level lookup table.
    """

    __slots__ = ["lut"]

    def __init__(self, lut: Union[np.ndarray, Sequence[int]]) -> None:
        table = np.asarray(lut, dtype=np.int64)
        if table.shape != (LEVELS,):
            raise InvalidParameter(f"a transfer function needs exactly {LEVELS} entries")

        if table.min() < 0 or table.max() > 255:
            raise InvalidParameter("transfer function values must be in [0, 255]")

        if (np.diff(table) < 0).any():
            raise InvalidParameter("transfer functions must be monotone non-decreasing")

        frozen = table.astype(np.uint8)
        frozen.setflags(write=False)
        self.lut = frozen

    @classmethod
    def identity(cls) -> "TransferFunction":
        return cls(np.arange(LEVELS))

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return bool(np.array_equal(self.lut, other.lut))

    def __repr__(self) -> str:
        return f"TransferFunction({self.lut.tolist()!r})"


def build_transfer_function(src_hist: Histogram, target_hist: Histogram) -> TransferFunction:
    """Build the histogram-matching map from ``src_hist`` to ``target_hist``.

    ``map[v]`` is the smallest level ``u`` whose target CDF reaches the
    source CDF at ``v``.  CDFs are compared exactly by cross-multiplying
    the integer cumulative counts with the other side's total.

    Raises:
      EmptyHistogram: If either histogram has no counts.
    """
    src_total, target_total = src_hist.total, target_hist.total
    if src_total == 0 or target_total == 0:
        raise EmptyHistogram("histogram matching needs non-empty histograms")

    # Python ints, since pooled totals overflow int64 once multiplied.
    target_cdf = [int(count) * src_total for count in np.cumsum(target_hist.bins)]
    src_cdf = [int(count) * target_total for count in np.cumsum(src_hist.bins)]
    return TransferFunction([bisect_left(target_cdf, needed) for needed in src_cdf])


def translate_raster(img: Raster, f: TransferFunction) -> Raster:
    return Raster(f.lut[img.pixels])


def pooled_histogram(rasters: Iterable[Raster]) -> Histogram:
    """Sum the histograms of many rasters.
    """
    bins = np.zeros(LEVELS, dtype=np.int64)
    for raster in rasters:
        bins += histogram(raster).bins
    return Histogram(bins)


def cycle_consistency_loss(original: Raster, roundtrip: Raster) -> float:
    """Returns the mean absolute gray-level difference (L1) between an
    image and its round trip through both translation directions.

    Raises:
      DimensionMismatch: If the two rasters differ in size.
    """
    try:
        require_same_dims(original, roundtrip)
    except DimensionMismatch:
        raise DimensionMismatch(
            f"cannot compare a {original.width}x{original.height} image "
            f"with a {roundtrip.width}x{roundtrip.height} round trip"
        )

    difference = np.abs(original.pixels.astype(np.int64) - roundtrip.pixels.astype(np.int64))
    return int(difference.sum()) / difference.size


class TranslatorJob(NamedTuple):
    """A directory-to-directory translation run.
    """

    input_dir: Path
    output_dir: Path
    command: Optional[str] = None


class Translator(Protocol):  # pragma: no cover
    """Translators turn every tile in an input directory into a
    same-stem, same-size tile in an output directory.  Labels found
    beside the inputs are carried over to the outputs.
    """

    def translate_dir(self, input_dir: Path, output_dir: Path) -> List[Path]:
        ...


def copy_labels(image: Path, dims: Sequence[int], output_dir: Path) -> None:
    """Carry an image's ``.txt`` labels over to its translated copy.
    """
    source = image.with_suffix(".txt")
    if not source.exists():
        return

    labels = load_labels(source)
    save_labels(output_dir / source.name, transfer_annotations(labels, tuple(dims), tuple(dims)))


class HistogramMatchingTranslator:
    """Translates tiles by matching their pooled histogram to a target
    domain histogram.

    Parameters:
      target: The pooled histogram of target-domain tiles.
    """

    def __init__(self, target: Histogram) -> None:
        if target.total == 0:
            raise EmptyHistogram("the target histogram has no counts")
        self.target = target

    @classmethod
    def from_images(cls, paths: Iterable[Path], labelled_only: bool = False) -> "HistogramMatchingTranslator":
        """Pool the target histogram over a set of images.  With
        ``labelled_only``, images without a non-empty label file beside
        them are left out.
        """
        def keep(path: Path) -> bool:
            return not labelled_only or bool(load_labels(path.with_suffix(".txt")))

        selected = [path for path in paths if keep(path)]
        if not selected:
            raise EmptyHistogram("no target images to pool a histogram from")

        LOGGER.info("Pooling the target histogram over %d images.", len(selected))
        return cls(pooled_histogram(read_png(path) for path in selected))

    def fit(self, sources: Iterable[Raster]) -> TransferFunction:
        return build_transfer_function(pooled_histogram(sources), self.target)

    def translate_dir(self, input_dir: Path, output_dir: Path) -> List[Path]:
        images = list_images(input_dir)
        if not images:
            raise InvalidParameter(f"no images to translate in {input_dir}")

        rasters = [read_png(path) for path in images]
        f = self.fit(rasters)
        outputs = []
        for path, raster in zip(images, rasters):
            output = Path(output_dir) / f"{path.stem}.png"
            write_png(translate_raster(raster, f), output)
            copy_labels(path, raster.dims, Path(output_dir))
            outputs.append(output)

        LOGGER.info("Translated %d tiles into %s.", len(outputs), output_dir)
        return outputs


def run_external_translator(job: TranslatorJob) -> List[Path]:
    """Run an external translator over ``job.input_dir``.

    The command is run once with ``{in}`` and ``{out}`` replaced by the
    two directories.  Afterwards, every input must have a same-stem
    output of the same size.

    Raises:
      InvalidParameter: If the command lacks a placeholder or there is
        nothing to translate.
      CommandFailed: If the command fails.
      MissingOutputs: If outputs are missing.
      DimensionDrift: If an output changed size.
    """
    if not job.command:
        raise InvalidParameter("external translation needs a command template")

    require_placeholders(job.command, ("in", "out"))
    images = list_images(job.input_dir)
    if not images:
        raise InvalidParameter(f"no images to translate in {job.input_dir}")

    output_dir = Path(job.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    run_command(job.command, {"in": str(job.input_dir), "out": str(output_dir)}, output_dir=output_dir)

    found, missing = [], []
    for image in images:
        output = find_image(output_dir, image.stem)
        if output is None:
            missing.append(image.stem)
        else:
            found.append((image, output))

    if missing:
        raise MissingOutputs(missing)

    outputs = []
    for image, output in found:
        with Image.open(image) as source, Image.open(output) as translated:
            source_size, translated_size = source.size, translated.size

        if source_size != translated_size:
            raise DimensionDrift(f"{output.name} is {translated_size[0]}x{translated_size[1]} "
                                 f"but {image.name} is {source_size[0]}x{source_size[1]}")

        copy_labels(image, source_size, output_dir)
        outputs.append(output)
    return outputs


class ExternalTranslator:
    def __init__(self, command: str) -> None:
        require_placeholders(command, ("in", "out"))
        self.command = command

    def translate_dir(self, input_dir: Path, output_dir: Path) -> List[Path]:
        return run_external_translator(TranslatorJob(Path(input_dir), Path(output_dir), self.command))
