# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

from typing import Any, NewType, Tuple, Union

import typing_inspect

#: A pixel position (x, y) in some raster's frame.
Origin = Tuple[int, int]

#: Image dimensions as (width, height) in pixels.
Dims = Tuple[int, int]

#: An axis-aligned box given by its corners (x0, y0, x1, y1).
Corners = Tuple[float, float, float, float]

#: The stem of an image file, i.e. its name without the extension.
Stem = NewType("Stem", str)

#: Gray levels between 0 and 255.
GrayLevel = NewType("GrayLevel", int)


def extract_optional_annotation(annotation: Any) -> Tuple[bool, Any]:
    """Returns a tuple denoting whether or not the annotation is an
    Optional type and the inner annotation.
    """
    if typing_inspect.is_union_type(annotation):
        args = typing_inspect.get_args(annotation, evaluate=True)
        inner = [arg for arg in args if arg is not type(None)]  # noqa: E721
        if len(inner) != len(args):
            if len(inner) == 1:
                return True, inner[0]
            return True, Union[tuple(inner)]
    return False, annotation


def list_item_annotation(annotation: Any) -> Any:
    """Returns the item annotation of a ``List[T]`` annotation, or
    None when the annotation isn't a parameterized list.
    """
    if typing_inspect.get_origin(annotation) in (list,):
        args = typing_inspect.get_args(annotation, evaluate=True)
        return args[0] if args else Any
    return None
