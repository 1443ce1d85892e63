import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from craterkit import (
    Annotation, BaselineDetector, Detection, DetectorParams, ExternalDetector, Raster, detect_blobs,
    load_detections, nms, plan_tiles, save_detections, save_labels, stitch_detections, write_png
)
from craterkit.annotate import corners_iou
from craterkit.detect import read_detections, run_external_detector, write_detections
from craterkit.errors import InvalidParameter, ParseError, RangeError, UnknownOrigin


def box_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def detection(x0, y0, x1, y1, confidence, size=512):
    return Detection(Annotation.from_corners(x0 / size, y0 / size, x1 / size, y1 / size), confidence)


def disk_field(width, height, centers, radius, value=50, background=200):
    ys, xs = np.mgrid[0:height, 0:width]
    canvas = np.full((height, width), background, dtype=np.uint8)
    for cx, cy in centers:
        canvas[np.hypot(xs - cx, ys - cy) <= radius] = value
    return Raster(canvas)


def disk_corners(cx, cy, radius):
    return (cx - radius, cy - radius, cx + radius + 1, cy + radius + 1)


def test_detect_blobs_finds_nothing_in_constant_images():
    assert detect_blobs(Raster.filled(256, 256, 140)) == []


def test_detect_blobs_finds_a_single_dark_disk():
    # Given that I have a dark disk on a bright field
    img = disk_field(256, 256, [(128, 128)], 10)

    # When I run the blob detector
    dets = detect_blobs(img)

    # Then I should get back exactly one detection that overlaps the disk
    assert len(dets) == 1
    assert corners_iou(dets[0].ann.pixel_corners((256, 256)), disk_corners(128, 128, 10)) >= 0.5
    assert 0 < dets[0].confidence <= 1


def test_detect_blobs_finds_bright_blobs_too():
    img = disk_field(256, 256, [(100, 140)], 8, value=250, background=120)
    dets = detect_blobs(img)
    assert len(dets) == 1
    assert corners_iou(dets[0].ann.pixel_corners((256, 256)), disk_corners(100, 140, 8)) >= 0.5


def test_detect_blobs_finds_every_disk_in_a_field():
    # Given that I have twenty well-separated disks
    centers = [(60 + 100 * i, 60 + 100 * j) for j in range(4) for i in range(5)]
    img = disk_field(512, 420, centers, 9)

    # When I run the blob detector
    dets = detect_blobs(img)

    # Then every disk should be matched by exactly one detection
    assert len(dets) == 20
    for cx, cy in centers:
        overlaps = [corners_iou(det.ann.pixel_corners((512, 420)), disk_corners(cx, cy, 9)) for det in dets]
        assert sum(overlap >= 0.5 for overlap in overlaps) == 1

    # And the detections should be sorted by descending confidence
    confidences = [det.confidence for det in dets]
    assert confidences == sorted(confidences, reverse=True)


def test_detect_blobs_filters_by_area():
    # Given that I have a disk smaller than the minimum area
    img = disk_field(128, 128, [(64, 64)], 2)

    # When I run the blob detector
    # Then it should be ignored
    assert detect_blobs(img) == []


@pytest.mark.parametrize("seed", range(8))
def test_detect_blobs_follows_shifts_of_the_scene(seed):
    # Given that I have four disks well inside a field, and a shifted copy of that field
    rng = np.random.default_rng(seed)
    centers = [(x + int(rng.integers(-15, 16)), y + int(rng.integers(-15, 16))) for x in (140, 260) for y in (140, 260)]
    radius = int(rng.integers(6, 11))
    dx, dy = (int(v) for v in rng.integers(-50, 51, 2))
    moved = [(x + dx, y + dy) for x, y in centers]

    # When I detect blobs in both
    original = detect_blobs(disk_field(400, 400, centers, radius))
    shifted = detect_blobs(disk_field(400, 400, moved, radius))

    # Then the detections should move with the scene
    def placed(dets, offset):
        return sorted(
            (tuple(round(v - o, 6) for v, o in zip(det.ann.pixel_corners((400, 400)), offset * 2)), det.confidence)
            for det in dets
        )

    assert len(original) == len(shifted) == 4
    for (corners, conf), (expected, expected_conf) in zip(placed(shifted, (dx, dy)), placed(original, (0, 0))):
        assert corners == expected
        assert conf == pytest.approx(expected_conf, abs=1e-9)


@pytest.mark.parametrize("params", [
    DetectorParams(local_window=80),
    DetectorParams(blur_radius=-1),
    DetectorParams(min_area=100, max_area=100),
    DetectorParams(max_aspect=0.5),
])
def test_detector_params_are_validated(params):
    with pytest.raises(InvalidParameter):
        detect_blobs(Raster.filled(64, 64, 0), params)


def test_nms_keeps_single_detections():
    det = detection(10, 10, 30, 30, 0.4)
    assert nms([det]) == [det]


def test_nms_keeps_the_best_of_identical_boxes():
    best, worse = detection(10, 10, 30, 30, 0.9), detection(10, 10, 30, 30, 0.8)
    assert nms([worse, best], 0.5) == [best]


@pytest.mark.parametrize("seed", range(20))
def test_nms_matches_greedy_suppression(seed):
    # Given that I have ten random boxes
    rng = np.random.default_rng(seed)
    dets = []
    for _ in range(10):
        x, y = rng.uniform(0, 80, 2)
        w, h = rng.uniform(10, 40, 2)
        dets.append(detection(x, y, x + w, y + h, round(float(rng.uniform(0, 1)), 2), size=128))

    # When I suppress them
    kept = nms(dets, 0.3)

    # Then I should get back what greedy suppression keeps
    expected = []
    for det in sorted(dets, key=lambda d: (-d.confidence, d.ann.cx, d.ann.cy, d.ann.w, d.ann.h)):
        if all(box_iou(det.ann.corners, other.ann.corners) < 0.3 for other in expected):
            expected.append(det)
    assert kept == expected


@pytest.mark.parametrize("threshold", [0.0, 1.0, 1.5])
def test_nms_rejects_bad_thresholds(threshold):
    with pytest.raises(InvalidParameter):
        nms([], threshold)


def test_stitching_a_single_tile_is_the_identity():
    # Given that I have detections on a tile that covers the whole image
    grid = plan_tiles(512, 512, 512, 0)
    dets = [detection(10, 10, 30, 30, 0.9), detection(100, 200, 140, 230, 0.5)]

    # When I stitch them
    stitched = stitch_detections([((0, 0), dets)], grid)

    # Then I should get them back
    assert len(stitched) == 2
    for got, expected in zip(stitched, dets):
        assert got.confidence == expected.confidence
        assert got.ann.corners == pytest.approx(expected.ann.corners)


def test_stitching_merges_craters_seen_by_overlapping_tiles():
    # Given that I have one crater seen by both of two overlapping tiles
    grid = plan_tiles(1000, 512, 512, 24)
    left = detection(490, 100, 510, 120, 0.8)
    right = detection(3, 100, 23, 120, 0.7)

    # When I stitch them
    stitched = stitch_detections([((0, 0), [left]), ((488, 0), [right])], grid, 0.5)

    # Then only the more confident one should survive, in the parent frame
    assert len(stitched) == 1
    assert stitched[0].confidence == 0.8
    assert stitched[0].ann.pixel_corners((1000, 512)) == pytest.approx((490, 100, 510, 120))


def test_stitching_moves_boxes_by_their_tile_origin():
    # Given that I have random boxes on every tile of a grid
    rng = np.random.default_rng(8)
    grid = plan_tiles(768, 512, 256, 0)
    per_tile, expected = [], []
    for origin in grid.origins:
        dets = []
        for _ in range(3):
            x, y = rng.uniform(0, 200, 2)
            w, h = rng.uniform(5, 50, 2)
            dets.append(detection(x, y, x + w, y + h, float(rng.uniform(0.1, 1)), size=256))
            expected.append((origin[0] + x, origin[1] + y, origin[0] + x + w, origin[1] + y + h))
        per_tile.append((origin, dets))

    # When I stitch them with a threshold nothing reaches
    stitched = stitch_detections(per_tile, grid, 0.99)

    # Then every box should equal its translated original
    got = sorted(det.ann.pixel_corners((768, 512)) for det in stitched)
    assert len(got) == len(expected)
    for box, oracle in zip(got, sorted(expected)):
        assert box == pytest.approx(oracle, abs=1e-6)


def test_stitching_can_drop_detections_on_interior_tile_borders():
    # Given that I have a detection touching the border shared by two tiles
    grid = plan_tiles(1000, 512, 512, 24)
    clipped = detection(500, 100, 512, 120, 0.9)
    whole = detection(2, 100, 30, 120, 0.6)

    # When I stitch with an edge margin
    stitched = stitch_detections([((0, 0), [clipped]), ((488, 0), [whole])], grid, 0.5, edge_margin=2)

    # Then the clipped one should be dropped in favour of the whole one
    assert [det.confidence for det in stitched] == [0.6]


def test_stitching_rejects_unknown_origins():
    with pytest.raises(UnknownOrigin):
        stitch_detections([((5, 5), [])], plan_tiles(512, 512, 256, 0))


def test_detections_are_written_with_their_confidence():
    sink = io.StringIO()
    write_detections([Detection(Annotation(0, 0.5, 0.5, 0.1, 0.2), 0.87)], sink)
    assert sink.getvalue() == "0 0.500000 0.500000 0.100000 0.200000 0.870000\n"


@pytest.mark.parametrize("content,error", [
    ("0 0.5 0.5 0.1 0.1\n", ParseError),
    ("0 0.5 0.5 0.1 0.1 high\n", ParseError),
    ("0 0.5 0.5 0.1 0.1 1.5\n", RangeError),
])
def test_malformed_detections_are_rejected(content, error):
    with pytest.raises(error) as e:
        read_detections(io.StringIO(content), "scene.txt")

    assert str(e.value).startswith("scene.txt:1: ")


def test_detections_survive_a_round_trip(tmp_path):
    dets = [detection(10, 10, 30, 30, 0.9), detection(100, 200, 140, 230, 0.5)]
    save_detections(tmp_path / "scene.txt", dets)
    loaded = load_detections(tmp_path / "scene.txt")
    assert [det.confidence for det in loaded] == [0.9, 0.5]
    assert loaded[0].ann.corners == pytest.approx(dets[0].ann.corners, abs=1e-6)


@pytest.fixture
def scenes(tmp_path):
    images = tmp_path / "images"
    write_png(disk_field(128, 128, [(64, 64)], 10), images / "a.png")
    write_png(disk_field(128, 128, [(40, 40), (90, 90)], 8), images / "b.png")
    save_labels(images / "a.txt", [Annotation(0, 0.5, 0.5, 0.15625, 0.15625)])
    return images


def test_baseline_detector_writes_one_file_per_image(tmp_path, scenes):
    # When I run the baseline detector serially and on a thread pool
    serial = BaselineDetector().detect_dir(scenes, tmp_path / "serial")
    with ThreadPoolExecutor(max_workers=2) as executor:
        pooled = BaselineDetector(executor=executor).detect_dir(scenes, tmp_path / "pooled")

    # Then I should get the same detections either way
    assert [p.name for p in serial] == [p.name for p in pooled] == ["a.txt", "b.txt"]
    for a, b in zip(serial, pooled):
        assert load_detections(a) == load_detections(b)
    assert len(load_detections(serial[1])) == 2


def test_external_detectors_that_write_nothing_yield_empty_files(tmp_path, scenes, stub_command):
    # Given that I have a detector that skips every image
    command = stub_command("detect_perfect.py", "{in} {out} --only nothing")

    # When I run it
    paths = run_external_detector(scenes, tmp_path / "dets", command)

    # Then every image should get an empty detection file
    assert [p.name for p in paths] == ["a.txt", "b.txt"]
    assert all(load_detections(path) == [] for path in paths)


def test_external_detectors_report_what_they_find(tmp_path, scenes, stub_command):
    # Given that I have a perfect external detector
    detector = ExternalDetector(stub_command("detect_perfect.py", "--weights {model} {in} {out}"))

    # When I run it with a model
    paths = detector.detect_dir(scenes, tmp_path / "dets", model="moon.pt")

    # Then the ground truth should come back with full confidence
    assert load_detections(paths[0]) == [Detection(Annotation(0, 0.5, 0.5, 0.15625, 0.15625), 1.0)]
    assert load_detections(paths[1]) == []
    # And the model should have been passed along
    assert (tmp_path / "dets" / "weights.log").read_text() == "moon.pt\n"


def test_external_detector_output_is_validated(tmp_path, scenes, stub_command):
    # Given that I have a detector that writes a malformed line
    command = stub_command("detect_perfect.py", "{in} {out} --garbage")

    # When I run it
    # Then a ParseError naming the file should be raised
    with pytest.raises(ParseError) as e:
        run_external_detector(scenes, tmp_path / "dets", command)

    assert e.value.path == str(tmp_path / "dets" / "a.txt")


def test_external_detectors_need_their_directories():
    with pytest.raises(InvalidParameter):
        ExternalDetector("yolo --weights {model} {in}")
