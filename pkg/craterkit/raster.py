# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Single-channel 8-bit rasters and the quality-improvement stage
(ROI crop and CLAHE).
"""

import logging
import math
from pathlib import Path
from typing import Any, NamedTuple, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, GridTooFine, InvalidParameter, OutOfBounds, ZeroArea
from .files import atomic_write

LOGGER = logging.getLogger(__name__)

#: The number of gray levels of an 8-bit raster.
LEVELS = 256

#: ITU-R 601 luma weights used to fold color inputs into gray.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

PathLike = Union[str, Path]


class Raster:
    """An immutable 8-bit single-channel image.

    Parameters:
      pixels: A 2D uint8 array of shape (height, width).  The array is
        copied and frozen so rasters can be shared between threads.
    """

    __slots__ = ["pixels"]

    def __init__(self, pixels: np.ndarray) -> None:
        if not isinstance(pixels, np.ndarray) or pixels.ndim != 2:
            raise InvalidParameter("raster pixels must be a 2D array")

        if pixels.dtype != np.uint8:
            raise InvalidParameter(f"raster pixels must be uint8, not {pixels.dtype}")

        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ZeroArea("raster must have a positive width and height")

        frozen = np.array(pixels, dtype=np.uint8, order="C", copy=True)
        frozen.setflags(write=False)
        self.pixels = frozen

    @classmethod
    def from_values(cls, width: int, height: int, values: Sequence[int]) -> "Raster":
        """Build a raster from a row-major sequence of gray levels.

        Raises:
          InvalidParameter: When the value count isn't width * height
            or a value falls outside [0, 255].
        """
        data = np.asarray(values, dtype=np.int64)
        if data.size != width * height:
            raise InvalidParameter(f"expected {width * height} values, got {data.size}")

        if data.size and (data.min() < 0 or data.max() > 255):
            raise InvalidParameter("gray levels must be in [0, 255]")

        return cls(data.reshape(height, width).astype(np.uint8))

    @classmethod
    def filled(cls, width: int, height: int, value: int) -> "Raster":
        return cls(np.full((height, width), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def dims(self) -> Tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"Raster(width={self.width}, height={self.height})"


class PixelRect(NamedTuple):
    """A pixel-aligned rectangle with its origin at the top-left corner.
    """

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def translate(self, dx: int, dy: int) -> "PixelRect":
        return PixelRect(self.x + dx, self.y + dy, self.w, self.h)

    def fits(self, width: int, height: int) -> bool:
        """Returns True when the rect lies fully inside a width x height raster.
        """
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height


class Histogram:
    """Gray-level counts of a raster.
    """

    __slots__ = ["bins"]

    def __init__(self, bins: Union[np.ndarray, Sequence[int]]) -> None:
        counts = np.asarray(bins, dtype=np.int64)
        if counts.shape != (LEVELS,):
            raise InvalidParameter(f"a histogram needs exactly {LEVELS} bins")

        if (counts < 0).any():
            raise InvalidParameter("histogram bins must be non-negative")

        counts = counts.copy()
        counts.setflags(write=False)
        self.bins = counts

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    def __add__(self, other: "Histogram") -> "Histogram":
        return Histogram(self.bins + other.bins)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Histogram):
            return NotImplemented
        return bool(np.array_equal(self.bins, other.bins))

    def __repr__(self) -> str:
        return f"Histogram(total={self.total})"


def roi_crop(img: Raster, rect: PixelRect) -> Raster:
    """Cut the region ``rect`` out of ``img``.

    Raises:
      ZeroArea: If the rect has no width or no height.
      OutOfBounds: If the rect isn't fully inside the image.
    """
    if rect.w <= 0 or rect.h <= 0:
        raise ZeroArea(f"crop rect {tuple(rect)} has zero area")

    if not rect.fits(img.width, img.height):
        raise OutOfBounds(f"crop rect {tuple(rect)} exceeds {img.width}x{img.height} image")

    return Raster(img.pixels[rect.y:rect.y2, rect.x:rect.x2])


def histogram(img: Raster) -> Histogram:
    return Histogram(np.bincount(img.pixels.ravel(), minlength=LEVELS))


def clip_histogram(bins: np.ndarray, limit: float) -> Tuple[np.ndarray, float]:
    """Clip a histogram at ``limit`` and spread the excess uniformly
    over all bins, then re-clip once.

    Returns:
      The clipped bins (as floats) and the residual excess discarded by
      the repair pass.  The two always add up to the original total.
    """
    counts = np.asarray(bins, dtype=np.float64)
    excess = np.maximum(counts - limit, 0.0).sum()
    clipped = np.minimum(counts, limit) + excess / counts.size

    residual = float(np.maximum(clipped - limit, 0.0).sum())
    clipped = np.minimum(clipped, limit)
    return clipped, residual


def equalization_map(bins: np.ndarray) -> np.ndarray:
    """Build the monotone gray-level mapping that equalizes ``bins``.
    """
    cdf = np.cumsum(np.asarray(bins, dtype=np.float64))
    if cdf[-1] <= 0:
        return np.arange(LEVELS, dtype=np.float64)
    return np.floor(255.0 * cdf / cdf[-1] + 0.5)


def clahe(img: Raster, grid_w: int = 8, grid_h: int = 8, clip_limit: float = 4.0) -> Raster:
    """Contrast limited adaptive histogram equalization.

    The image is split into ``grid_w x grid_h`` contextual regions.
    Each region's histogram is clipped at ``clip_limit * pixels / 256``
    and turned into an equalization mapping; every output pixel is the
    bilinear blend of the mappings of the four nearest region centers.
    Pixels outside the lattice of region centers use the nearest
    mappings.  Images made of a single gray level are returned as-is.

    Parameters:
      img: The input raster.
      grid_w: The number of regions along the x axis.
      grid_h: The number of regions along the y axis.
      clip_limit: Relative clip factor (>= 1).  ``math.inf`` disables
        clipping.

    Raises:
      GridTooFine: If a region would be smaller than 2x2 pixels.
      InvalidParameter: If clip_limit is below 1.
    """
    if grid_w < 1 or grid_h < 1 or img.width // grid_w < 2 or img.height // grid_h < 2:
        raise GridTooFine(f"a {grid_w}x{grid_h} grid is too fine for a {img.width}x{img.height} image")

    if not clip_limit >= 1.0:
        raise InvalidParameter(f"clip_limit must be >= 1, got {clip_limit}")

    pixels = img.pixels
    if pixels.min() == pixels.max():
        return img

    xs = _region_bounds(img.width, grid_w)
    ys = _region_bounds(img.height, grid_h)
    mappings = np.empty((grid_h, grid_w, LEVELS), dtype=np.float64)
    for j in range(grid_h):
        for i in range(grid_w):
            region = pixels[ys[j]:ys[j + 1], xs[i]:xs[i + 1]]
            counts = np.bincount(region.ravel(), minlength=LEVELS)
            if math.isfinite(clip_limit):
                counts, _ = clip_histogram(counts, clip_limit * region.size / LEVELS)
            mappings[j, i] = equalization_map(counts)

    x0, x1, wx = _interpolation_weights(img.width, xs)
    y0, y1, wy = _interpolation_weights(img.height, ys)
    wx, wy = wx[np.newaxis, :], wy[:, np.newaxis]
    r0, r1 = y0[:, np.newaxis], y1[:, np.newaxis]
    c0, c1 = x0[np.newaxis, :], x1[np.newaxis, :]

    top = (1.0 - wx) * mappings[r0, c0, pixels] + wx * mappings[r0, c1, pixels]
    bottom = (1.0 - wx) * mappings[r1, c0, pixels] + wx * mappings[r1, c1, pixels]
    blended = (1.0 - wy) * top + wy * bottom
    return Raster(np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8))


def _region_bounds(size: int, count: int) -> np.ndarray:
    return np.floor(np.arange(count + 1) * size / count + 0.5).astype(np.int64)


def _interpolation_weights(size: int, bounds: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns, for every coordinate along an axis, the indices of the
    two neighbouring regions and the weight of the second one.
    """
    centers = (bounds[:-1] + bounds[1:] - 1) / 2.0
    position = np.interp(np.arange(size, dtype=np.float64), centers, np.arange(centers.size, dtype=np.float64))
    lower = np.floor(position).astype(np.int64)
    upper = np.minimum(lower + 1, centers.size - 1)
    return lower, upper, position - lower


def to_gray(data: np.ndarray) -> np.ndarray:
    """Fold an image array of any depth and channel count into 8-bit gray.

    Color is converted with ``round(0.299 R + 0.587 G + 0.114 B)``;
    alpha is ignored; 16-bit data keeps its high byte; floats are
    assumed to be in [0, 1].
    """
    array = np.asarray(data)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8) * 255

    elif array.dtype.kind == "f":
        array = np.clip(np.floor(array * 255.0 + 0.5), 0, 255)

    elif array.dtype == np.uint16:
        array = array >> 8

    if array.ndim == 3:
        if array.shape[2] >= 3:
            weighted = sum(weight * array[:, :, c].astype(np.float64) for c, weight in enumerate(LUMA_WEIGHTS))
            array = np.floor(weighted + 0.5)
        else:
            array = array[:, :, 0]

    return np.clip(array, 0, 255).astype(np.uint8)


def read_png(path: PathLike) -> Raster:
    """Read an image file as an 8-bit grayscale raster.
    """
    with Image.open(path) as image:
        if image.mode == "P":
            image = image.convert("RGBA")
        elif image.mode in ("I;16", "I;16B", "I;16L"):
            array = np.asarray(image, dtype=np.uint16)
            return Raster(to_gray(array))
        elif image.mode == "I":
            # 32-bit integer mode is how 16-bit grayscale PNGs usually load.
            array = np.asarray(image, dtype=np.int64)
            return Raster(to_gray(np.clip(array, 0, 65535).astype(np.uint16)))
        elif image.mode == "1":
            image = image.convert("L")

        array = np.asarray(image)

    if array.dtype != np.uint8 or array.ndim != 2:
        LOGGER.debug("Converting %s (%s, shape %s) to 8-bit gray.", path, array.dtype, array.shape)

    return Raster(to_gray(array))


def write_png(img: Raster, path: PathLike) -> None:
    """Atomically write a raster as an 8-bit grayscale PNG.
    """
    with atomic_write(path, "wb") as f:
        Image.fromarray(img.pixels, mode="L").save(f, format="PNG")


def require_same_dims(a: Raster, b: Raster) -> None:
    if a.dims != b.dims:
        raise DimensionMismatch(f"rasters differ in size: {a.width}x{a.height} vs {b.width}x{b.height}")
