# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

from .annotate import Annotation, load_labels, project_corners, project_to_tile, save_labels, transfer_annotations
from .components import CommandInjector, CommandResolver, Component, TranslatorFactory, default_components
from .config import Config, load_config
from .dataset import (
    COMPOSITIONS, Composition, Manifest, ManifestEntry, compose, export_layout, read_manifest, split_dataset,
    write_manifest
)
from .detect import (
    BaselineDetector, Detection, Detector, DetectorParams, ExternalDetector, detect_blobs, load_detections, nms,
    save_detections, stitch_detections
)
from .ensemble import WorldTransform, dedup_georegistered, fuse_detections
from .errors import (
    CommandFailed, CraterkitError, DimensionDrift, DimensionMismatch, EmptyCatalog, EmptyHistogram,
    FieldValidationError, GridTooFine, InvalidParameter, InvalidRange, MissingColumn, MissingOutputs,
    MissingSource, OffMosaic, OutOfBounds, ParseError, PlacementFailure, PolarRegion, RangeError,
    ResolutionError, SingularTransform, StemMismatch, TileLargerThanImage, TooFewGroups, UnknownOrigin,
    ValidationError, ZeroArea
)
from .evaluate import EvalReport, average_precision, evaluate_dataset, match_detections, render_report
from .georef import (
    CatalogSchema, CraterRecord, MoonProjection, crater_to_pixel_box, filter_by_diameter, parse_crater_catalog,
    prune_by_contrast
)
from .overlay import DetectionSet, draw_detections, render_overlay
from .raster import Histogram, PixelRect, Raster, clahe, read_png, roi_crop, write_png
from .settings import Settings, TOMLSettings
from .synthgen import SceneSpec, generate_scene
from .tiling import Tile, TileGrid, assemble_tiles, extract_tiles, plan_tiles
from .translate import (
    ExternalTranslator, HistogramMatchingTranslator, TransferFunction, Translator, build_transfer_function,
    cycle_consistency_loss, translate_raster
)
from .validation import Field, Missing, dump_schema, field, is_schema, load_schema, schema

__version__ = "0.3.0"

__all__ = [
    "__version__",

    # Rasters
    "Raster", "PixelRect", "Histogram", "roi_crop", "clahe", "read_png", "write_png",

    # Tiling
    "TileGrid", "Tile", "plan_tiles", "extract_tiles", "assemble_tiles",

    # Georeferencing
    "CraterRecord", "CatalogSchema", "MoonProjection", "parse_crater_catalog", "crater_to_pixel_box",
    "filter_by_diameter", "prune_by_contrast",

    # Annotations
    "Annotation", "project_to_tile", "project_corners", "transfer_annotations", "load_labels", "save_labels",

    # Translation
    "TransferFunction", "Translator", "HistogramMatchingTranslator", "ExternalTranslator",
    "build_transfer_function", "translate_raster", "cycle_consistency_loss",

    # Detection
    "Detection", "DetectorParams", "Detector", "BaselineDetector", "ExternalDetector", "detect_blobs", "nms",
    "stitch_detections", "load_detections", "save_detections",

    # Evaluation
    "EvalReport", "match_detections", "average_precision", "evaluate_dataset", "render_report",

    # Ensembles
    "WorldTransform", "fuse_detections", "dedup_georegistered",

    # Datasets
    "COMPOSITIONS", "ManifestEntry", "Manifest", "Composition", "read_manifest", "write_manifest",
    "split_dataset", "compose", "export_layout",

    # Synthetic scenes
    "SceneSpec", "generate_scene",

    # Overlays
    "DetectionSet", "draw_detections", "render_overlay",

    # Configuration
    "Settings", "TOMLSettings", "Config", "load_config",
    "Field", "Missing", "field", "schema", "is_schema", "dump_schema", "load_schema",

    # Dependency-injection
    "Component", "CommandInjector", "CommandResolver", "TranslatorFactory", "default_components",

    # Errors
    "CraterkitError", "InvalidParameter", "InvalidRange", "OutOfBounds", "ZeroArea", "GridTooFine",
    "TileLargerThanImage", "DimensionMismatch", "MissingColumn", "EmptyCatalog", "PolarRegion", "OffMosaic",
    "ParseError", "RangeError", "EmptyHistogram", "CommandFailed", "MissingOutputs", "DimensionDrift",
    "UnknownOrigin", "StemMismatch", "SingularTransform", "TooFewGroups", "MissingSource", "PlacementFailure",
    "ResolutionError", "ValidationError", "FieldValidationError",
]
