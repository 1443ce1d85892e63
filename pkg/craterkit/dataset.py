# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Dataset manifests, group-aware splitting and the four training set
compositions compared by the experiment.

A manifest is a tab-separated file with one entry per line::

  tiles/a_x0_y0.png<TAB>tiles/a_x0_y0.txt<TAB>a<TAB>train
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidParameter, MissingSource, ParseError, TooFewGroups
from .files import atomic_write, copy_file, write_text
from .tiling import parse_tile_name

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

#: The values of a manifest entry's split field.
SPLIT_NAMES = ("train", "val", "test", "unsplit")

#: The training set compositions, in report order.
COMPOSITIONS = ("bomb", "moon", "synthetic", "combined")


class ManifestEntry(NamedTuple):
    image: str
    label: str
    group: str
    split: str = "unsplit"

    @property
    def stem(self) -> str:
        return Path(self.image).stem


class Manifest:
    """An ordered, duplicate-free list of manifest entries.

    Raises:
      InvalidParameter: If an image appears twice, a label doesn't
        follow the ``<stem>.txt`` convention or a split is unknown.
    """

    __slots__ = ["entries"]

    def __init__(self, entries: Iterable[ManifestEntry] = ()) -> None:
        self.entries: Tuple[ManifestEntry, ...] = tuple(entries)
        seen = set()
        for entry in self.entries:
            if entry.image in seen:
                raise InvalidParameter(f"image {entry.image!r} appears twice in the manifest")
            seen.add(entry.image)

            if Path(entry.label).name != f"{entry.stem}.txt":
                raise InvalidParameter(f"label {entry.label!r} doesn't belong to image {entry.image!r}")

            if entry.split not in SPLIT_NAMES:
                raise InvalidParameter(f"unknown split {entry.split!r} for {entry.image!r}")

            if not entry.group:
                raise InvalidParameter(f"image {entry.image!r} has no group")

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Manifest):
            return NotImplemented
        return self.entries == other.entries

    def __repr__(self) -> str:
        return f"Manifest({len(self.entries)} entries)"

    def split(self, name: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == name]

    @property
    def groups(self) -> List[str]:
        return sorted({entry.group for entry in self.entries})


def entry_for_image(image: PathLike, group: Optional[str] = None, split: str = "unsplit") -> ManifestEntry:
    """Build the entry of an image whose label sits beside it.  The
    group defaults to the parent image's stem for tiles and to the
    image's own stem otherwise.
    """
    path = Path(image)
    if group is None:
        parsed = parse_tile_name(path.stem)
        group = parsed[0] if parsed else path.stem
    return ManifestEntry(str(path), str(path.with_suffix(".txt")), group, split)


def write_manifest(manifest: Manifest, path: PathLike) -> None:
    with atomic_write(path) as f:
        for entry in manifest:
            f.write("\t".join(entry) + "\n")


def read_manifest(path: PathLike) -> Manifest:
    """Read a manifest file.

    Raises:
      ParseError: On malformed lines.
    """
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue

            fields = line.split("\t")
            if len(fields) != 4 or not all(fields):
                raise ParseError("expected 'image<TAB>label<TAB>group<TAB>split'", str(path), lineno)

            if fields[3] not in SPLIT_NAMES:
                raise ParseError(f"unknown split {fields[3]!r}", str(path), lineno)

            entries.append(ManifestEntry(*fields))

    try:
        return Manifest(entries)
    except InvalidParameter as e:
        raise ParseError(e.message, str(path))


def read_regions(path: PathLike) -> Dict[str, str]:
    """Read a region file mapping image stems to groups, one
    ``stem<TAB>group`` pair per line.

    Raises:
      ParseError: On malformed lines.
    """
    regions = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue

            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2 or not all(field.strip() for field in fields):
                raise ParseError("expected 'stem<TAB>group'", str(path), lineno)

            regions[fields[0].strip()] = fields[1].strip()
    return regions


def apply_regions(manifest: Manifest, regions: Mapping[str, str]) -> Manifest:
    """Regroup entries whose image (or, for tiles, parent image) stem
    is listed in ``regions``.
    """
    entries = []
    for entry in manifest:
        parsed = parse_tile_name(entry.stem)
        parent = parsed[0] if parsed else entry.stem
        group = regions.get(entry.stem, regions.get(parent, entry.group))
        entries.append(entry._replace(group=group))
    return Manifest(entries)


def split_counts(n_groups: int, ratios: Sequence[float]) -> List[int]:
    """Distribute groups over the splits by the largest remainder
    method.  Ties go to the earlier split.
    """
    targets = [n_groups * ratio for ratio in ratios]
    counts = [int(np.floor(target)) for target in targets]
    remainders = sorted(range(len(ratios)), key=lambda i: (-(targets[i] - counts[i]), i))
    for i in remainders[:n_groups - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(
        manifest: Manifest,
        ratios: Sequence[float] = (0.7, 0.15, 0.15),
        seed: int = 0,
) -> Manifest:
    """Assign whole groups to the train, val and test splits.

    Groups are shuffled with a seeded generator and dealt out in order,
    so no group spans two splits and a fixed seed always gives the same
    assignment.

    Raises:
      InvalidParameter: If the ratios aren't three positive numbers
        summing to 1.
      TooFewGroups: If there are fewer than three groups.
    """
    if len(ratios) != 3 or any(ratio <= 0 for ratio in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidParameter(f"split ratios must be three positive numbers summing to 1, got {tuple(ratios)}")

    groups = manifest.groups
    if len(groups) < 3:
        raise TooFewGroups(f"need at least 3 groups to split, found {len(groups)}")

    order = np.random.default_rng(seed).permutation(len(groups))
    n_train, n_val, _ = split_counts(len(groups), ratios)
    assignment = {}
    for rank, index in enumerate(order):
        if rank < n_train:
            assignment[groups[index]] = "train"
        elif rank < n_train + n_val:
            assignment[groups[index]] = "val"
        else:
            assignment[groups[index]] = "test"

    LOGGER.info("Split %d groups into %d/%d/%d.", len(groups), n_train, n_val, len(groups) - n_train - n_val)
    return Manifest(entry._replace(split=assignment[entry.group]) for entry in manifest)


class Composition(NamedTuple):
    """A training set composition together with the shared validation
    and test entries.
    """

    name: str
    train: Tuple[ManifestEntry, ...]
    val: Tuple[ManifestEntry, ...]
    test: Tuple[ManifestEntry, ...]

    def manifest(self) -> Manifest:
        """Returns the composition as a manifest, with every entry's
        split set to the part it belongs to.
        """
        entries = []
        for split, part in (("train", self.train), ("val", self.val), ("test", self.test)):
            entries.extend(entry._replace(split=split) for entry in part)
        return Manifest(_unique(entries))


def _unique(entries: Iterable[ManifestEntry]) -> List[ManifestEntry]:
    seen, unique = set(), []
    for entry in entries:
        if entry.image not in seen:
            seen.add(entry.image)
            unique.append(entry)
    return unique


def compose(tables: Mapping[str, Manifest], name: str) -> Composition:
    """Build a training set composition.

    ``tables`` maps ``bomb`` to the split aerial manifest, ``moon`` to
    the prepared moon tiles and ``synthetic`` to the translated moon
    tiles.  Training sets are:

    * bomb: the aerial train split,
    * moon: every moon tile,
    * synthetic: every translated tile,
    * combined: the aerial train split and every translated tile.

    Validation and test always come from the aerial manifest.

    Raises:
      MissingSource: If a needed manifest isn't available.
    """
    if name not in COMPOSITIONS:
        raise InvalidParameter(f"unknown composition {name!r}; expected one of {', '.join(COMPOSITIONS)}")

    def need(source: str) -> Manifest:
        manifest = tables.get(source)
        if manifest is None:
            raise MissingSource(f"composition {name!r} needs the {source!r} manifest")
        return manifest

    bomb = need("bomb")
    if name == "bomb":
        train = bomb.split("train")
    elif name == "moon":
        train = list(need("moon"))
    elif name == "synthetic":
        train = list(need("synthetic"))
    else:
        train = _unique([*bomb.split("train"), *need("synthetic")])

    return Composition(name, tuple(train), tuple(bomb.split("val")), tuple(bomb.split("test")))


def export_layout(composition: Composition, root: PathLike) -> Manifest:
    """Copy a composition into the ``images/{train,val,test}`` and
    ``labels/{train,val,test}`` layout most detector trainers expect.
    Images without a label file get an empty one.

    Returns:
      The manifest of the exported copies, which is also written to
      ``<root>/manifest.tsv``.

    Raises:
      InvalidParameter: If two entries of one split share a file name.
    """
    root = Path(root)
    exported = []
    for split, part in (("train", composition.train), ("val", composition.val), ("test", composition.test)):
        images_dir, labels_dir = root / "images" / split, root / "labels" / split
        images_dir.mkdir(parents=True, exist_ok=True)
        labels_dir.mkdir(parents=True, exist_ok=True)
        names = set()
        for entry in _unique(part):
            source = Path(entry.image)
            if source.name in names:
                raise InvalidParameter(f"two {split} images are named {source.name!r}")
            names.add(source.name)

            image, label = images_dir / source.name, labels_dir / f"{source.stem}.txt"
            copy_file(source, image)
            if Path(entry.label).exists():
                copy_file(entry.label, label)
            else:
                write_text(label, "")

            exported.append(ManifestEntry(str(image), str(label), entry.group, split))

    manifest = Manifest(exported)
    write_manifest(manifest, root / "manifest.tsv")
    LOGGER.info("Exported composition %r to %s.", composition.name, root)
    return manifest
