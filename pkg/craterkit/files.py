# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Any, Iterator, List, Union

PathLike = Union[str, Path]

#: The image extensions recognized when scanning directories.
IMAGE_EXTENSIONS = (".png", ".tif", ".tiff", ".jpg", ".jpeg")


@contextmanager
def atomic_write(path: PathLike, mode: str = "w") -> Iterator[IO[Any]]:
    """Open a temporary file beside ``path`` and move it into place
    once the block exits without error.  Readers never observe a
    partially-written file.

    Examples:

      >>> with atomic_write("labels/tile_x0_y0.txt") as f:
      ...   f.write("0 0.500000 0.500000 0.100000 0.100000\\n")
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=str(target.parent), prefix=f".{target.stem}", suffix=".tmp")
    try:
        encoding = None if "b" in mode else "utf-8"
        with os.fdopen(fd, mode, encoding=encoding, newline=None if "b" in mode else "") as f:
            yield f
        os.replace(tmp_path, str(target))
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def write_text(path: PathLike, text: str) -> None:
    with atomic_write(path) as f:
        f.write(text)


def copy_file(source: PathLike, target: PathLike) -> None:
    with open(source, "rb") as src, atomic_write(target, "wb") as dst:
        shutil.copyfileobj(src, dst)


def list_images(directory: PathLike) -> List[Path]:
    """Returns the image files in a directory sorted by name.
    """
    root = Path(directory)
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


def find_image(directory: PathLike, stem: str) -> Union[Path, None]:
    """Returns the image with the given stem in a directory, if any.
    """
    for extension in IMAGE_EXTENSIONS:
        candidate = Path(directory) / f"{stem}{extension}"
        if candidate.is_file():
            return candidate
    return None
