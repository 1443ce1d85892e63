# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Drawing detections of several models onto an image, one color per
model.  Sets are drawn in the order given, so where boxes of two
models share pixels the later model's color wins.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from PIL import Image, ImageDraw

from .detect import Detection
from .files import atomic_write

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

Color = Tuple[int, int, int]

#: The colors of the four experiment models.
DEFAULT_PALETTE: Dict[str, Color] = {
    "moon": (0, 255, 0),
    "bomb": (0, 0, 255),
    "synthetic": (255, 105, 180),
    "combined": (255, 255, 0),
}

#: Colors handed out to models missing from the palette.
FALLBACK_COLORS: List[Color] = [
    (255, 0, 0),
    (0, 255, 255),
    (255, 128, 0),
    (128, 0, 255),
    (255, 255, 255),
]


class DetectionSet(NamedTuple):
    name: str
    detections: Sequence[Detection]
    color: Optional[Color] = None


def pick_colors(sets: Sequence[DetectionSet], palette: Optional[Dict[str, Color]] = None) -> List[Color]:
    palette = DEFAULT_PALETTE if palette is None else palette
    colors, fallback = [], 0
    for detection_set in sets:
        if detection_set.color is not None:
            colors.append(detection_set.color)
        elif detection_set.name in palette:
            colors.append(palette[detection_set.name])
        else:
            colors.append(FALLBACK_COLORS[fallback % len(FALLBACK_COLORS)])
            fallback += 1
    return colors


def box_pixels(det: Detection, width: int, height: int) -> Tuple[int, int, int, int]:
    """Returns the inclusive pixel rectangle (left, top, right, bottom)
    covered by a detection.
    """
    x0, y0, x1, y1 = det.ann.pixel_corners((width, height))
    left, top = int(math.floor(x0 + 0.5)), int(math.floor(y0 + 0.5))
    right, bottom = int(math.floor(x1 + 0.5)) - 1, int(math.floor(y1 + 0.5)) - 1
    left, top = min(max(left, 0), width - 1), min(max(top, 0), height - 1)
    right, bottom = min(max(right, left), width - 1), min(max(bottom, top), height - 1)
    return left, top, right, bottom


def draw_detections(image: Image.Image, sets: Sequence[DetectionSet],
                    palette: Optional[Dict[str, Color]] = None) -> Image.Image:
    """Returns an RGB copy of ``image`` with a 1-px rectangle around
    every detection.
    """
    canvas = image.convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for detection_set, color in zip(sets, pick_colors(sets, palette)):
        for det in detection_set.detections:
            draw.rectangle(box_pixels(det, canvas.width, canvas.height), outline=color, width=1)
    return canvas


def render_overlay(image_path: PathLike, sets: Sequence[DetectionSet], out_path: PathLike,
                   palette: Optional[Dict[str, Color]] = None) -> None:
    with Image.open(image_path) as image:
        canvas = draw_detections(image, sets, palette)

    with atomic_write(out_path, "wb") as f:
        canvas.save(f, format="PNG")

    LOGGER.info("Drew %d detection sets onto %s.", len(sets), out_path)
