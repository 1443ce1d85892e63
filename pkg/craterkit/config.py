# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Pipeline configuration.

Configuration is read from a TOML file with one table per stage::

  [tiling]
  tile_size = 512
  overlap = 64

  [detect]
  detector = "external"
  command = "$YOLO_HOME/detect.sh --weights {model} {in} {out}"

Every setting can be overridden with a ``section.key=value`` pair, and
overrides take precedence over the file, which takes precedence over
the defaults below.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional

from .detect import DetectorParams
from .errors import ValidationError
from .external import placeholders
from .georef import CatalogSchema
from .settings import Settings, TOMLSettings
from .synthgen import SceneSpec
from .validation import Field, dump_schema, load_schema, schema

LOGGER = logging.getLogger(__name__)


@schema
class RasterSettings:
    clahe: bool = Field(default=True, description="Apply CLAHE to aerial images.")
    grid_w: int = Field(default=8, minimum=1)
    grid_h: int = Field(default=8, minimum=1)
    clip_limit: float = Field(default=4.0, minimum=1.0)


@schema
class TilingSettings:
    tile_size: int = Field(default=512, minimum=1)
    overlap: int = Field(default=64, minimum=0)


@schema
class GeorefSettings:
    lat_column: str = Field(default="LAT_CIRC_IMG", min_length=1)
    lon_column: str = Field(default="LON_CIRC_IMG", min_length=1)
    diameter_column: str = Field(default="DIAM_CIRC_IMG", min_length=1)
    delimiter: str = Field(default=",", min_length=1)
    meters_per_pixel: Optional[float] = Field(
        default=None,
        exclusive_minimum=0,
        description="Mosaic resolution; derived from the lunar radius when unset.",
    )
    max_abs_lat: float = Field(default=85.0, exclusive_minimum=0, exclusive_maximum=90)
    d_min: float = Field(default=0.4, exclusive_minimum=0)
    d_max: float = Field(default=5.0, exclusive_minimum=0)
    prune_delta: float = Field(default=10.0, minimum=0)


@schema
class AnnotateSettings:
    min_visible: float = Field(default=0.4, exclusive_minimum=0, maximum=1)


@schema
class TranslateSettings:
    translator: str = Field(default="histogram", choices=["histogram", "external"])
    command: Optional[str] = None
    pool_labelled_only: bool = False
    cycle_loss: bool = True


@schema
class DetectSettings:
    detector: str = Field(default="baseline", choices=["baseline", "external"])
    command: Optional[str] = None
    model: str = Field(default="{composition}", description="Model name template; {composition} is replaced.")
    blur_radius: int = Field(default=1, minimum=0)
    local_window: int = Field(default=81, minimum=3)
    threshold_offset: float = Field(default=48.0, minimum=0)
    min_area: int = Field(default=36, minimum=1)
    max_area: int = Field(default=16384, minimum=1)
    max_aspect: float = Field(default=2.5, minimum=1)
    stitch_iou: float = Field(default=0.5, exclusive_minimum=0, exclusive_maximum=1)
    edge_margin: int = Field(default=0, minimum=0)


@schema
class EvaluateSettings:
    iou_threshold: float = Field(default=0.5, exclusive_minimum=0, exclusive_maximum=1)
    conf_threshold: float = Field(default=0.25, minimum=0, maximum=1)
    operating_point: str = Field(default="fixed", choices=["fixed", "max_f1"])
    splits: List[str] = Field(
        default_factory=lambda: ["test"],
        min_items=1,
        item_options={"choices": ["train", "val", "test"]},
    )


@schema
class EnsembleSettings:
    iou_threshold: float = Field(default=0.55, exclusive_minimum=0, exclusive_maximum=1)
    world_iou_threshold: float = Field(default=0.55, exclusive_minimum=0, exclusive_maximum=1)


@schema
class DatasetSettings:
    ratios: List[float] = Field(
        default_factory=lambda: [0.7, 0.15, 0.15],
        min_items=3,
        max_items=3,
        item_options={"exclusive_minimum": 0},
    )
    seed: int = 0
    regions: Optional[str] = Field(default=None, description="A stem<TAB>group file overriding groups.")


@schema
class SynthgenSettings:
    width: int = Field(default=512, minimum=1)
    height: int = Field(default=512, minimum=1)
    n_craters: int = Field(default=10, minimum=0)
    radius_min: int = Field(default=6, minimum=1)
    radius_max: int = Field(default=16, minimum=1)
    contrast_min: int = Field(default=120, minimum=0, maximum=255)
    contrast_max: int = Field(default=128, minimum=0, maximum=255)
    noise_sigma: float = Field(default=8.0, minimum=0)
    background: int = Field(default=128, minimum=0, maximum=255)
    seed: int = 0
    count: int = Field(default=1, minimum=1, description="How many scenes to generate.")


@schema
class PipelineSettings:
    jobs: int = Field(default=1, minimum=1)
    log_level: str = Field(default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


@schema
class Config:
    raster: RasterSettings = Field(default_factory=RasterSettings)
    tiling: TilingSettings = Field(default_factory=TilingSettings)
    georef: GeorefSettings = Field(default_factory=GeorefSettings)
    annotate: AnnotateSettings = Field(default_factory=AnnotateSettings)
    translate: TranslateSettings = Field(default_factory=TranslateSettings)
    detect: DetectSettings = Field(default_factory=DetectSettings)
    evaluate: EvaluateSettings = Field(default_factory=EvaluateSettings)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)
    dataset: DatasetSettings = Field(default_factory=DatasetSettings)
    synthgen: SynthgenSettings = Field(default_factory=SynthgenSettings)
    pipeline: PipelineSettings = Field(default_factory=PipelineSettings)

    def detector_params(self) -> DetectorParams:
        d = self.detect
        return DetectorParams(d.blur_radius, d.local_window, d.threshold_offset, d.min_area, d.max_area, d.max_aspect)

    def catalog_schema(self) -> CatalogSchema:
        g = self.georef
        return CatalogSchema(g.lat_column, g.lon_column, g.diameter_column, g.delimiter)

    def scene_spec(self, seed: Optional[int] = None) -> SceneSpec:
        s = self.synthgen
        return SceneSpec(
            s.width, s.height, s.n_craters, s.radius_min, s.radius_max, s.contrast_min, s.contrast_max,
            s.noise_sigma, s.seed if seed is None else seed, s.background,
        )


def check_config(config: Config) -> Config:
    """Check the constraints that span several settings.

    Raises:
      ValidationError: Naming every violated constraint.
    """
    errors: Dict[str, Dict[str, str]] = {}

    def fail(section: str, name: str, reason: str) -> None:
        errors.setdefault(section, {})[name] = reason

    if config.tiling.overlap >= config.tiling.tile_size:
        fail("tiling", "overlap", "value must be < tile_size")

    if config.georef.d_min > config.georef.d_max:
        fail("georef", "d_min", "value must be <= d_max")

    if len(config.georef.delimiter) != 1:
        fail("georef", "delimiter", "value must be a single character")

    columns = {config.georef.lat_column, config.georef.lon_column, config.georef.diameter_column}
    if len(columns) != 3:
        fail("georef", "lat_column", "catalog columns must be distinct")

    if config.detect.min_area >= config.detect.max_area:
        fail("detect", "min_area", "value must be < max_area")

    if config.detect.local_window % 2 == 0:
        fail("detect", "local_window", "value must be odd")

    if abs(sum(config.dataset.ratios) - 1.0) > 1e-9:
        fail("dataset", "ratios", "values must sum to 1")

    if config.synthgen.radius_min > config.synthgen.radius_max:
        fail("synthgen", "radius_min", "value must be <= radius_max")

    if config.synthgen.contrast_min > config.synthgen.contrast_max:
        fail("synthgen", "contrast_min", "value must be <= contrast_max")

    for section, kind in (("translate", "translator"), ("detect", "detector")):
        settings = getattr(config, section)
        if getattr(settings, kind) != "external":
            continue

        if not settings.command:
            fail(section, "command", f"an external {kind} needs a command template")
        elif not {"in", "out"} <= set(placeholders(settings.command)):
            fail(section, "command", "command template must contain {in} and {out}")

    if errors:
        raise ValidationError(errors)

    return config


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> Config:
    """Load the configuration, applying dotted-path overrides on top
    of the file (if any) on top of the defaults.

    Raises:
      FileNotFoundError: If the file doesn't exist.
      ValidationError: If the result is not valid.
    """
    settings: Settings = TOMLSettings.from_path(path) if path else Settings()
    if overrides:
        try:
            settings = settings.merged(overrides)
        except TypeError as e:
            raise ValidationError({"overrides": str(e)})

    config = check_config(load_schema(Config, settings))
    LOGGER.debug("Loaded configuration %r.", dump_schema(config))
    return config
