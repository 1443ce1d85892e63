# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""The pipeline commands.

Every ``cmd_*`` function is one stage of the pipeline.  Their
``Config``, ``Detector``, ``TranslatorFactory`` and executor
parameters are filled in by a :class:`~craterkit.components.CommandResolver`,
so the CLI only passes paths and flags::

  resolver = CommandInjector(default_components(config)).get_resolver()
  resolver.resolve(cmd_detect)(images=Path("tiles"), out=Path("dets"))

Stages read their inputs from directories and write their outputs
next to one another: ``<stem>.png`` images with ``<stem>.txt`` labels
or detections, ``<parent>.tiles`` grid sidecars and a ``manifest.tsv``.
"""

import logging
from concurrent.futures import Executor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

from PIL import Image

from .annotate import Annotation, load_labels, project_boxes, save_labels, transfer_annotations
from .components import TranslatorFactory
from .config import Config
from .dataset import (
    COMPOSITIONS, Manifest, ManifestEntry, apply_regions, compose, entry_for_image, export_layout, read_manifest,
    read_regions, split_dataset, write_manifest
)
from .detect import Detector, load_detection_dir, load_detections, save_detections, stitch_detections
from .ensemble import GeoImage, dedup_georegistered, format_world_detection, fuse_detections, read_world_transform
from .errors import DimensionDrift, EmptyCatalog, MissingSource
from .evaluate import EvalReport, evaluate_dataset, hypothesis_summary, render_report, write_report_csv
from .files import atomic_write, find_image, list_images, write_text
from .georef import (
    MoonProjection, filter_by_diameter, load_crater_catalog, project_catalog, prune_by_contrast
)
from .log import set_stage
from .overlay import DetectionSet, render_overlay
from .raster import PixelRect, Raster, clahe, read_png, roi_crop, write_png
from .synthgen import generate_scene
from .tiling import extract_tiles, parse_tile_name, plan_tiles, read_grid, tile_name, write_grid
from .translate import build_transfer_function, cycle_consistency_loss, pooled_histogram, translate_raster
from .typing import Corners, Origin

LOGGER = logging.getLogger(__name__)

_T = TypeVar("_T")
_R = TypeVar("_R")

#: The name of the manifest every preparing stage writes.
MANIFEST_NAME = "manifest.tsv"


def run_all(executor: Optional[Executor], fn: Callable[[_T], _R], items: Iterable[_T]) -> List[_R]:
    """Apply ``fn`` to every item, on the executor if there is one.
    Results come back in input order either way.
    """
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def write_tiles(
        stem: str,
        img: Raster,
        boxes: Sequence[Corners],
        out: Path,
        config: Config,
        offset: Origin = (0, 0),
) -> List[ManifestEntry]:
    """Tile ``img`` into ``out``, projecting ``boxes`` onto every tile.

    ``boxes`` are pixel corners in a frame where ``img`` starts at
    ``offset``; that's how labels of the uncropped image reach the
    tiles of a cropped one.
    """
    tile_size, overlap = config.tiling.tile_size, config.tiling.overlap
    grid = plan_tiles(img.width, img.height, tile_size, overlap)
    entries = []
    for tile in extract_tiles(img, grid):
        name = tile_name(stem, tile.origin)
        window = (tile.origin[0] + offset[0], tile.origin[1] + offset[1])
        labels = project_boxes(boxes, window, tile_size, config.annotate.min_visible)
        write_png(tile.img, out / f"{name}.png")
        save_labels(out / f"{name}.txt", labels)
        entries.append(entry_for_image(out / f"{name}.png", group=stem))

    write_grid(grid, out / f"{stem}.tiles")
    LOGGER.debug("Cut %d tiles.", len(grid.origins))
    return entries


def cmd_prepare_moon(mosaic: Path, catalog: Path, out: Path, config: Config) -> Manifest:
    """Turn a global moon mosaic and a crater catalog into labelled tiles.

    Catalog craters are filtered by diameter, projected onto the
    mosaic, pruned by contrast and then projected onto every tile.
    An empty catalog still produces tiles, with empty label files.
    """
    set_stage("prepare-moon", mosaic.stem)
    georef = config.georef
    img = read_png(mosaic)
    projection = MoonProjection.for_mosaic(img.width, img.height, georef.meters_per_pixel, georef.max_abs_lat)

    try:
        records = load_crater_catalog(catalog, config.catalog_schema()).records
    except EmptyCatalog:
        LOGGER.warning("Catalog %s has no usable rows; tiles get empty labels.", catalog)
        records = []

    records = filter_by_diameter(records, georef.d_min, georef.d_max)
    boxes = prune_by_contrast(img, project_catalog(records, projection), georef.prune_delta)
    LOGGER.info("Kept %d of the catalog's craters.", len(boxes))

    out.mkdir(parents=True, exist_ok=True)
    corners = [(box.x, box.y, box.x2, box.y2) for box in boxes]
    manifest = Manifest(write_tiles(mosaic.stem, img, corners, out, config))
    write_manifest(manifest, out / MANIFEST_NAME)
    set_stage(None)
    return manifest


def _aerial_labels(image: Path, labels: Optional[Path]) -> Path:
    if labels is not None:
        return labels / f"{image.stem}.txt"
    return image.with_suffix(".txt")


def cmd_prepare_aerial(
        images: Path,
        out: Path,
        config: Config,
        executor: Optional[Executor],
        labels: Optional[Path] = None,
        roi: Optional[PixelRect] = None,
) -> Manifest:
    """Crop, enhance and tile aerial images together with their labels.

    Parameters:
      images: An image or a directory of images.
      out: The directory tiles and labels are written to.
      labels: A directory of ``<stem>.txt`` label files.  By default,
        labels are looked up beside each image.
      roi: The region kept of every image.  Defaults to all of it.
    """
    paths = list_images(images) if images.is_dir() else [images]
    out.mkdir(parents=True, exist_ok=True)
    settings = config.raster

    def prepare(image: Path) -> List[ManifestEntry]:
        set_stage("prepare-aerial", image.stem)
        img = read_png(image)
        window = roi or PixelRect(0, 0, img.width, img.height)
        cropped = roi_crop(img, window)
        if settings.clahe:
            cropped = clahe(cropped, settings.grid_w, settings.grid_h, settings.clip_limit)

        boxes = [ann.pixel_corners(img.dims) for ann in load_labels(_aerial_labels(image, labels))]
        return write_tiles(image.stem, cropped, boxes, out, config, offset=(window.x, window.y))

    entries = [entry for part in run_all(executor, prepare, paths) for entry in part]
    manifest = Manifest(entries)
    write_manifest(manifest, out / MANIFEST_NAME)
    LOGGER.info("Prepared %d tiles from %d aerial images.", len(entries), len(paths))
    set_stage(None)
    return manifest


def cmd_split(manifest: Path, out: Path, config: Config) -> Manifest:
    """Assign the groups of a manifest to train, val and test.
    """
    set_stage("split")
    prepared = read_manifest(manifest)
    if config.dataset.regions:
        prepared = apply_regions(prepared, read_regions(config.dataset.regions))

    result = split_dataset(prepared, config.dataset.ratios, config.dataset.seed)
    write_manifest(result, out)
    return result


def _target_images(target: Path) -> List[Path]:
    if target.is_dir():
        return list_images(target)

    manifest = read_manifest(target)
    entries = manifest.split("train") or list(manifest)
    return [Path(entry.image) for entry in entries]


def cycle_losses(sources: Sequence[Path], outputs: Sequence[Path]) -> List[Tuple[str, float]]:
    """Send translated tiles back through the reverse histogram match
    and measure how far each lands from its original.
    """
    translated = {path.stem: path for path in outputs}
    pairs = [(source, translated[source.stem]) for source in sources if source.stem in translated]
    originals = [read_png(source) for source, _ in pairs]
    results = [read_png(output) for _, output in pairs]
    back = build_transfer_function(pooled_histogram(results), pooled_histogram(originals))
    return [
        (source.stem, cycle_consistency_loss(original, translate_raster(result, back)))
        for (source, _), original, result in zip(pairs, originals, results)
    ]


def write_cycle_losses(losses: Sequence[Tuple[str, float]], path: Path) -> None:
    with atomic_write(path) as f:
        f.write("stem\tloss\n")
        for stem, loss in losses:
            f.write(f"{stem}\t{loss:.6f}\n")
        if losses:
            f.write(f"mean\t{sum(loss for _, loss in losses) / len(losses):.6f}\n")


def cmd_translate(source: Path, target: Path, out: Path, config: Config, factory: TranslatorFactory) -> List[Path]:
    """Translate moon tiles into the aerial domain.

    Parameters:
      source: The directory of prepared moon tiles.
      target: A directory of aerial tiles or an aerial manifest, whose
        train split (or every entry, if unsplit) is the target domain.
      out: Where translated tiles, their labels and a manifest go.
    """
    set_stage("translate")
    translator = factory.for_target(_target_images(target))
    out.mkdir(parents=True, exist_ok=True)
    outputs = translator.translate_dir(source, out)

    if config.translate.cycle_loss and outputs:
        losses = cycle_losses(list_images(source), outputs)
        write_cycle_losses(losses, out / "cycle_loss.tsv")
        LOGGER.info("Mean cycle-consistency loss is %.3f.", sum(loss for _, loss in losses) / max(len(losses), 1))

    manifest = Manifest(entry_for_image(output) for output in outputs)
    write_manifest(manifest, out / MANIFEST_NAME)
    set_stage(None)
    return outputs


def cmd_annotate_transfer(source: Path, translated: Path) -> int:
    """Copy the labels of source tiles onto their translated versions.

    Returns:
      The number of label files written.

    Raises:
      DimensionDrift: If a translated tile's size differs from its source.
    """
    set_stage("annotate-transfer")
    written = 0
    for image in list_images(translated):
        original = find_image(source, image.stem)
        if original is None:
            LOGGER.warning("No source image for %s; skipping it.", image.name)
            continue

        with Image.open(original) as a, Image.open(image) as b:
            src_dims, dst_dims = a.size, b.size

        if src_dims != dst_dims:
            raise DimensionDrift(f"{image.name} is {dst_dims[0]}x{dst_dims[1]} "
                                 f"but {original.name} is {src_dims[0]}x{src_dims[1]}")

        labels = load_labels(original.with_suffix(".txt"))
        save_labels(image.with_suffix(".txt"), transfer_annotations(labels, src_dims, dst_dims))
        written += 1

    LOGGER.info("Transferred labels onto %d images.", written)
    set_stage(None)
    return written


def _tile_size(images: Path, stem: str) -> int:
    path = find_image(images, stem)
    if path is None:
        raise MissingSource(f"tile image {stem!r} not found in {images}")

    with Image.open(path) as image:
        return image.size[0]


def cmd_detect(
        images: Path,
        out: Path,
        config: Config,
        detector: Detector,
        stitch: bool = False,
        model: Optional[str] = None,
) -> List[Path]:
    """Run the configured detector over a directory of images.

    With ``stitch``, the images are taken to be tiles: their detections
    are written to ``<out>/tiles`` and every parent's detections are
    stitched into ``<out>/<parent>.txt`` using its ``.tiles`` sidecar.
    """
    set_stage("detect")
    if not stitch:
        paths = detector.detect_dir(images, out, model=model)
        set_stage(None)
        return paths

    tiles: Dict[str, List[Tuple[Origin, Path]]] = {}
    for path in detector.detect_dir(images, out / "tiles", model=model):
        parsed = parse_tile_name(path.stem)
        if parsed is None:
            LOGGER.warning("%s is not a tile; leaving it out of stitching.", path.stem)
            continue
        tiles.setdefault(parsed[0], []).append((parsed[1], path))

    stitched = []
    for parent, parts in sorted(tiles.items()):
        set_stage("stitch", parent)
        sidecar = images / f"{parent}.tiles"
        if not sidecar.exists():
            raise MissingSource(f"tile sidecar {sidecar} not found")

        tile_size = _tile_size(images, tile_name(parent, parts[0][0]))
        grid = read_grid(sidecar, tile_size, config.tiling.overlap)
        dets = stitch_detections(
            [(origin, load_detections(path)) for origin, path in parts],
            grid,
            config.detect.stitch_iou,
            config.detect.edge_margin,
        )
        save_detections(out / f"{parent}.txt", dets)
        stitched.append(out / f"{parent}.txt")

    LOGGER.info("Stitched detections for %d images.", len(stitched))
    set_stage(None)
    return stitched


def ground_truth(gt: Path, split: str = "test") -> Dict[str, List[Annotation]]:
    """Load ground-truth labels keyed by image stem.

    ``gt`` is either a directory of images with their labels beside
    them or a manifest, in which case only the entries of ``split`` are
    used (or every entry when the manifest isn't split).
    """
    if gt.is_dir():
        return {image.stem: load_labels(image.with_suffix(".txt")) for image in list_images(gt)}

    manifest = read_manifest(gt)
    entries = manifest.split(split) or manifest.split("unsplit")
    return {entry.stem: load_labels(entry.label) for entry in entries}


def cmd_eval(
        gt: Path,
        detections: Path,
        config: Config,
        model_name: str = "model",
        split: str = "test",
        out: Optional[Path] = None,
) -> EvalReport:
    """Evaluate a directory of detection files against ground truth.
    When ``out`` is given, the report is also written there as CSV.
    """
    set_stage("eval", model_name)
    settings = config.evaluate
    labels = ground_truth(gt, split)
    report = evaluate_dataset(
        labels,
        load_detection_dir(detections, labels),
        settings.iou_threshold,
        settings.conf_threshold,
        model_name,
        split,
        settings.operating_point,
    )
    if out is not None:
        write_report_csv([report], out)

    set_stage(None)
    return report


def _image_size(images: Path, stem: str) -> Optional[Tuple[int, int]]:
    path = find_image(images, stem)
    if path is None:
        return None

    with Image.open(path) as image:
        return image.size


def cmd_ensemble(inputs: Sequence[Path], out: Path, config: Config, images: Optional[Path] = None) -> List[Path]:
    """Fuse the detections of several models, image by image.

    When ``images`` is given, images there with a ``<stem>.affine``
    sidecar are also deduplicated on the ground and the result is
    written to ``<out>/world.txt``.
    """
    set_stage("ensemble")
    per_model = [load_detection_dir(directory) for directory in inputs]
    stems = sorted({stem for dets in per_model for stem in dets})
    out.mkdir(parents=True, exist_ok=True)

    paths, fused = [], {}
    for stem in stems:
        fused[stem] = fuse_detections([dets.get(stem, []) for dets in per_model], config.ensemble.iou_threshold)
        save_detections(out / f"{stem}.txt", fused[stem])
        paths.append(out / f"{stem}.txt")

    if images is not None:
        registered = []
        for stem in stems:
            sidecar, size = images / f"{stem}.affine", _image_size(images, stem)
            if not sidecar.exists() or size is None:
                LOGGER.warning("%s is not georegistered; leaving it out of world deduplication.", stem)
                continue
            registered.append(GeoImage(stem, read_world_transform(sidecar), size, fused[stem]))

        world = dedup_georegistered(registered, config.ensemble.world_iou_threshold)
        with atomic_write(out / "world.txt") as f:
            for det in world:
                f.write(format_world_detection(det))
        LOGGER.info("Kept %d world detections across %d images.", len(world), len(registered))

    set_stage(None)
    return paths


def cmd_experiment(
        bomb: Path,
        out: Path,
        config: Config,
        detector: Detector,
        moon: Optional[Path] = None,
        synthetic: Optional[Path] = None,
        compositions: Sequence[str] = COMPOSITIONS,
) -> List[EvalReport]:
    """Compare the training set compositions on the aerial splits.

    Each composition is exported under ``<out>/<name>/data``, the
    detector is run over its evaluated splits with the composition's
    model and the reports are written to ``<out>/report.txt`` and
    ``<out>/report.csv``.

    Raises:
      MissingSource: If a composition needs a manifest that wasn't given.
    """
    tables = {"bomb": read_manifest(bomb)}
    if moon is not None:
        tables["moon"] = read_manifest(moon)
    if synthetic is not None:
        tables["synthetic"] = read_manifest(synthetic)

    settings = config.evaluate
    reports = []
    for name in compositions:
        set_stage("experiment", name)
        root = out / name
        exported = export_layout(compose(tables, name), root / "data")
        model = config.detect.model.replace("{composition}", name)
        for split in settings.splits:
            detections = root / "detections" / split
            detector.detect_dir(root / "data" / "images" / split, detections, model=model,
                                manifest=root / "data" / MANIFEST_NAME)
            labels = {entry.stem: load_labels(entry.label) for entry in exported.split(split)}
            reports.append(evaluate_dataset(
                labels,
                load_detection_dir(detections, labels),
                settings.iou_threshold,
                settings.conf_threshold,
                name,
                split,
                settings.operating_point,
            ))

    text = render_report(reports) + "\n" + "\n".join(hypothesis_summary(reports)) + "\n"
    write_text(out / "report.txt", text)
    write_report_csv(reports, out / "report.csv")
    set_stage(None)
    return reports


def cmd_overlay(image: Path, detections: Sequence[Tuple[str, Path]], out: Path) -> Path:
    """Draw the detections of several models onto an image.

    Raises:
      MissingSource: If a detection file doesn't exist.
    """
    set_stage("overlay", image.stem)
    sets = []
    for name, path in detections:
        if not path.exists():
            raise MissingSource(f"detection file {path} not found")
        sets.append(DetectionSet(name, load_detections(path)))

    render_overlay(image, sets, out)
    set_stage(None)
    return out


def cmd_synthgen(out: Path, config: Config, executor: Optional[Executor]) -> List[Path]:
    """Render ``synthgen.count`` synthetic scenes with their labels.
    Scene ``i`` uses seed ``synthgen.seed + i``.
    """
    out.mkdir(parents=True, exist_ok=True)

    def render(index: int) -> Path:
        seed = config.synthgen.seed + index
        set_stage("synthgen", str(seed))
        img, labels = generate_scene(config.scene_spec(seed))
        path = out / f"scene_{seed}.png"
        write_png(img, path)
        save_labels(path.with_suffix(".txt"), labels)
        return path

    paths = run_all(executor, render, range(config.synthgen.count))
    LOGGER.info("Generated %d synthetic scenes.", len(paths))
    set_stage(None)
    return paths

