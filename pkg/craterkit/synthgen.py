# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Synthetic crater fields with exact ground truth.

Each crater is a dark disk with a one pixel wide bright half rim on
its lower-right side, drawn on a mid-gray background with Gaussian
noise.  Craters never overlap, and neither do the annuli around them
(out to 1.5 radii) that contrast checks look at.
"""

import logging
from typing import List, NamedTuple, Tuple

import numpy as np

from .annotate import Annotation
from .errors import InvalidParameter, InvalidRange, PlacementFailure
from .raster import PixelRect, Raster

LOGGER = logging.getLogger(__name__)

#: How many random positions are tried per crater.
MAX_ATTEMPTS = 1000


class SceneSpec(NamedTuple):
    width: int = 512
    height: int = 512
    n_craters: int = 10
    radius_min: int = 6
    radius_max: int = 16
    contrast_min: int = 120
    contrast_max: int = 128
    noise_sigma: float = 8.0
    seed: int = 0
    background: int = 128

    def validate(self) -> "SceneSpec":
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameter(f"scene dimensions must be positive, got {self.width}x{self.height}")

        if self.n_craters < 0:
            raise InvalidParameter(f"n_craters must be >= 0, got {self.n_craters}")

        if not 1 <= self.radius_min <= self.radius_max:
            raise InvalidRange(f"radius range [{self.radius_min}, {self.radius_max}] is invalid")

        if not 0 <= self.contrast_min <= self.contrast_max <= 255:
            raise InvalidRange(f"contrast range [{self.contrast_min}, {self.contrast_max}] is invalid")

        if self.noise_sigma < 0:
            raise InvalidParameter(f"noise_sigma must be >= 0, got {self.noise_sigma}")

        if not 0 <= self.background <= 255:
            raise InvalidParameter(f"background must be a gray level, got {self.background}")

        if self.n_craters and 2 * _margin(self.radius_max) >= min(self.width, self.height):
            raise InvalidParameter(f"radius {self.radius_max} doesn't fit a {self.width}x{self.height} scene")

        return self


class Crater(NamedTuple):
    x: int
    y: int
    radius: int
    contrast: int

    @property
    def box(self) -> PixelRect:
        return PixelRect(self.x - self.radius, self.y - self.radius, 2 * self.radius + 1, 2 * self.radius + 1)


def _margin(radius: int) -> int:
    # Room for the rim plus the annulus out to 1.5 radii.
    return int(np.ceil(1.5 * radius)) + 2


def place_craters(spec: SceneSpec, rng: np.random.Generator) -> List[Crater]:
    """Pick non-overlapping crater positions.

    Raises:
      PlacementFailure: If a crater can't be placed in MAX_ATTEMPTS tries.
    """
    craters: List[Crater] = []
    for index in range(spec.n_craters):
        radius = int(rng.integers(spec.radius_min, spec.radius_max + 1))
        contrast = int(rng.integers(spec.contrast_min, spec.contrast_max + 1))
        margin = _margin(radius)
        for _ in range(MAX_ATTEMPTS):
            x = int(rng.integers(margin, spec.width - margin))
            y = int(rng.integers(margin, spec.height - margin))
            if all(np.hypot(x - other.x, y - other.y) > 1.5 * (radius + other.radius) + 2 for other in craters):
                craters.append(Crater(x, y, radius, contrast))
                break
        else:
            raise PlacementFailure(f"could not place crater {index + 1} of {spec.n_craters} without overlap")
    return craters


def render_crater(canvas: np.ndarray, crater: Crater, background: int) -> None:
    """Draw a crater onto a float canvas of background values.
    """
    r = crater.radius
    x0, y0 = crater.x - r - 2, crater.y - r - 2
    ys, xs = np.mgrid[y0:crater.y + r + 3, x0:crater.x + r + 3]
    dx, dy = xs - crater.x, ys - crater.y
    distance = np.hypot(dx, dy)
    window = canvas[y0:crater.y + r + 3, x0:crater.x + r + 3]
    window[distance <= r + 0.5] = max(background - crater.contrast, 0)
    rim = (distance > r + 0.5) & (distance <= r + 1.5) & (dx + dy > 0)
    window[rim] = min(background + crater.contrast / 2.0, 255.0)


def generate_scene(spec: SceneSpec) -> Tuple[Raster, List[Annotation]]:
    """Render a synthetic crater field.

    Returns:
      The raster and the normalized bounding boxes of the crater disks,
      in placement order.

    Raises:
      PlacementFailure: If the craters don't fit without overlap.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    craters = place_craters(spec, rng)

    canvas = np.full((spec.height, spec.width), float(spec.background))
    for crater in craters:
        render_crater(canvas, crater, spec.background)

    if spec.noise_sigma > 0:
        canvas += rng.normal(0.0, spec.noise_sigma, canvas.shape)

    pixels = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    dims = (spec.width, spec.height)
    labels = [Annotation.from_pixel_rect(crater.box, dims) for crater in craters]
    LOGGER.debug("Generated a %dx%d scene with %d craters.", spec.width, spec.height, len(craters))
    return Raster(pixels), labels
