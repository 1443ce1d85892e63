import io

import numpy as np
import pytest

from craterkit import Annotation, PixelRect, load_labels, project_to_tile, save_labels, transfer_annotations
from craterkit.annotate import corners_iou, project_boxes, read_labels, write_labels
from craterkit.errors import InvalidParameter, ParseError, RangeError


def random_annotations(count, seed=0):
    rng = np.random.default_rng(seed)
    w, h = rng.uniform(0.01, 0.2, count), rng.uniform(0.01, 0.2, count)
    cx, cy = rng.uniform(0.1, 0.9, count), rng.uniform(0.1, 0.9, count)
    return [Annotation(0, *values) for values in zip(cx, cy, w, h)]


@pytest.mark.parametrize("values", [
    (-1, 0.5, 0.5, 0.1, 0.1),
    (0, 1.5, 0.5, 0.1, 0.1),
    (0, 0.5, 0.5, 0.0, 0.1),
    (0, 0.5, 0.5, 0.1, 1.2),
    (0, 0.05, 0.5, 0.2, 0.1),
    (0, float("nan"), 0.5, 0.1, 0.1),
])
def test_annotations_reject_out_of_range_values(values):
    with pytest.raises(RangeError):
        Annotation(*values)


def test_boxes_inside_a_tile_are_normalized():
    # Given that I have a box fully inside a 512px tile
    box = PixelRect(100, 100, 50, 50)

    # When I project it onto the tile
    annotation = project_to_tile(box, (0, 0), 512)

    # Then I should get back its normalized center and size
    assert annotation == Annotation(0, 0.244140625, 0.244140625, 0.09765625, 0.09765625)


def test_boxes_are_projected_relative_to_the_tile_origin():
    annotation = project_to_tile(PixelRect(612, 100, 50, 50), (512, 0), 512)
    assert annotation == Annotation(0, 0.244140625, 0.244140625, 0.09765625, 0.09765625)


def test_boxes_outside_a_tile_are_dropped():
    assert project_to_tile(PixelRect(600, 600, 20, 20), (0, 0), 512) is None
    assert project_to_tile(PixelRect(512, 0, 20, 20), (0, 0), 512) is None


@pytest.mark.parametrize("min_visible,kept", [(0.4, True), (0.5, True), (0.6, False)])
def test_half_clipped_boxes_depend_on_min_visible(min_visible, kept):
    # Given that I have a box half of which sticks out of the tile
    box = PixelRect(490, 100, 44, 20)

    # When I project it onto the tile
    annotation = project_to_tile(box, (0, 0), 512, min_visible)

    # Then it should only be kept when enough of it is visible
    if not kept:
        assert annotation is None
    else:
        # And it should be clipped to the visible part
        assert annotation.corners == pytest.approx((490 / 512, 100 / 512, 1.0, 120 / 512))


def test_a_min_visible_of_one_keeps_only_boxes_fully_inside():
    assert project_to_tile(PixelRect(462, 0, 50, 50), (0, 0), 512, 1.0) is not None
    assert project_to_tile(PixelRect(463, 0, 50, 50), (0, 0), 512, 1.0) is None


@pytest.mark.parametrize("min_visible", [0.0, -0.5, 1.5])
def test_min_visible_must_be_a_fraction(min_visible):
    with pytest.raises(InvalidParameter):
        project_to_tile(PixelRect(0, 0, 10, 10), (0, 0), 512, min_visible)


def test_projection_matches_the_visible_area_of_straddling_boxes():
    # Given that I have many random boxes around the edges of a 64px tile at (32, 32)
    rng = np.random.default_rng(5)
    origin, size, min_visible = (32, 32), 64, 0.4
    boxes = [
        PixelRect(int(x), int(y), int(w), int(h))
        for x, y, w, h in zip(
            rng.integers(0, 110, 500), rng.integers(0, 110, 500), rng.integers(1, 30, 500), rng.integers(1, 30, 500)
        )
    ]

    kept = project_boxes([(b.x, b.y, b.x2, b.y2) for b in boxes], origin, size, min_visible)
    expected = []
    for box in boxes:
        # When I count the box's pixels inside the tile
        mask = np.zeros((160, 160), dtype=bool)
        mask[box.y:box.y2, box.x:box.x2] = True
        visible = mask[32:96, 32:96].sum()
        if visible and visible >= min_visible * box.area:
            expected.append(box)

    # Then exactly the boxes with enough visible pixels should be kept
    assert len(kept) == len(expected)
    for annotation, box in zip(kept, expected):
        x0, y0 = max(box.x, 32), max(box.y, 32)
        x1, y1 = min(box.x2, 96), min(box.y2, 96)
        assert annotation.pixel_corners((size, size)) == pytest.approx((x0 - 32, y0 - 32, x1 - 32, y1 - 32))


def test_transfer_annotations_keeps_normalized_labels():
    # Given that I have some labels
    labels = random_annotations(20)

    # When I transfer them between images of the same or different sizes
    # Then I should get back the same labels
    assert transfer_annotations(labels, (512, 512), (512, 512)) == labels
    assert transfer_annotations(labels, (512, 512), (256, 256)) == labels


def test_transferred_labels_match_direct_scaling():
    # Given that I have some labels on a 512x384 image
    labels = random_annotations(100, seed=1)
    src, dst = (512, 384), (300, 200)

    # When I transfer them to a 300x200 image
    transferred = transfer_annotations(labels, src, dst)

    # Then their pixel corners should equal the directly scaled ones
    for before, after in zip(labels, transferred):
        x0, y0, x1, y1 = before.pixel_corners(src)
        scaled = (x0 * dst[0] / src[0], y0 * dst[1] / src[1], x1 * dst[0] / src[0], y1 * dst[1] / src[1])
        assert after.pixel_corners(dst) == pytest.approx(scaled, abs=1e-9)


def test_transfer_annotations_rejects_empty_images():
    with pytest.raises(InvalidParameter):
        transfer_annotations([], (0, 512), (512, 512))


def test_labels_are_written_one_per_line():
    # Given that I have a single annotation
    sink = io.StringIO()

    # When I write it
    write_labels([Annotation(0, 0.5, 0.5, 0.1, 0.2)], sink)

    # Then I should get back one line with six decimals per value
    assert sink.getvalue() == "0 0.500000 0.500000 0.100000 0.200000\n"


def test_empty_label_files_have_no_labels(tmp_path):
    save_labels(tmp_path / "empty.txt", [])
    assert (tmp_path / "empty.txt").read_text() == ""
    assert load_labels(tmp_path / "empty.txt") == []


def test_missing_label_files_have_no_labels(tmp_path):
    assert load_labels(tmp_path / "idontexist.txt") == []


def test_labels_survive_a_round_trip_within_a_micro(tmp_path):
    # Given that I have 1000 random labels
    labels = random_annotations(1000, seed=2)

    # When I save and load them
    save_labels(tmp_path / "scene.txt", labels)
    loaded = load_labels(tmp_path / "scene.txt")

    # Then every coordinate should be within 1e-6 of the original
    assert len(loaded) == len(labels)
    error = np.abs(np.array([a[1:] for a in loaded]) - np.array([a[1:] for a in labels])).max()
    assert error <= 1e-6


@pytest.mark.parametrize("content,error,line", [
    ("0 0.5 0.5 0.1\n", ParseError, 1),
    ("0 0.5 0.5 0.1 0.1\nx 0.5 0.5 0.1 0.1\n", ParseError, 2),
    ("0 0.5 0.5 0.1 inf\n", ParseError, 1),
    ("\n0 1.5 0.5 0.1 0.1\n", RangeError, 2),
])
def test_malformed_labels_name_their_file_and_line(content, error, line):
    # When I read a malformed label file
    # Then an error naming the file and line should be raised
    with pytest.raises(error) as e:
        read_labels(io.StringIO(content), "scene.txt")

    assert e.value.path == "scene.txt"
    assert e.value.line == line


@pytest.mark.parametrize("a,b,expected", [
    ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
    ((0, 0, 10, 10), (20, 20, 30, 30), 0.0),
    ((0, 0, 10, 10), (5, 0, 15, 10), 1 / 3),
])
def test_corners_iou(a, b, expected):
    assert corners_iou(a, b) == pytest.approx(expected)
