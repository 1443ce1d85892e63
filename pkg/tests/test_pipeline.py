import numpy as np
import pytest

from craterkit import (
    Annotation, CommandInjector, CraterRecord, Detection, MoonProjection, PixelRect, Raster, SceneSpec,
    crater_to_pixel_box, default_components, detect_blobs, evaluate_dataset, extract_tiles, generate_scene, load_config,
    load_detections, load_labels, plan_tiles, read_manifest, read_png, save_detections, save_labels, stitch_detections,
    write_png
)
from craterkit.errors import DimensionDrift, MissingSource
from craterkit.pipeline import (
    cmd_annotate_transfer, cmd_detect, cmd_ensemble, cmd_eval, cmd_experiment, cmd_overlay, cmd_prepare_aerial,
    cmd_prepare_moon, cmd_split, cmd_synthgen, cmd_translate
)

CATALOG_HEADER = "CRATER_ID,LAT_CIRC_IMG,LON_CIRC_IMG,DIAM_CIRC_IMG\n"

#: A 100 km crater in the northern hemisphere, painted onto the mosaic.
VISIBLE = CraterRecord(30.0, 45.0, 100.0)

#: A crater of the same size that leaves no trace on the mosaic.
INVISIBLE = CraterRecord(-30.0, -90.0, 100.0)

#: A crater too large for the configured diameter range.
HUGE = CraterRecord(0.0, 0.0, 300.0)

MOON_SETTINGS = {
    "tiling.tile_size": "256",
    "tiling.overlap": "0",
    "georef.d_min": "1",
    "georef.d_max": "200",
    "raster.clahe": "false",
}


def injector_for(**overrides):
    return CommandInjector(default_components(load_config(overrides=overrides)))


def resolve(command, overrides=None):
    return injector_for(**(overrides or {})).get_resolver().resolve(command)


def write_mosaic(path):
    canvas = np.full((512, 1024), 200, dtype=np.uint8)
    box = crater_to_pixel_box(VISIBLE, MoonProjection.for_mosaic(1024, 512))
    canvas[box.y:box.y2, box.x:box.x2] = 40
    write_png(Raster(canvas), path)
    return box


def write_catalog(path, *records):
    rows = "".join(f"c{i},{r.lat},{r.lon},{r.diameter}\n" for i, r in enumerate(records))
    path.write_text(CATALOG_HEADER + rows)


def write_photos(directory, count, size=256, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(count):
        canvas = np.clip(rng.normal(150, 10, size=(size, size)), 0, 255).astype(np.uint8)
        x, y = (int(v) for v in rng.integers(20, size - 60, 2))
        canvas[y:y + 30, x:x + 30] = 60
        write_png(Raster(canvas), directory / f"photo{i}.png")
        save_labels(directory / f"photo{i}.txt", [Annotation.from_pixel_rect(PixelRect(x, y, 30, 30), (size, size))])


@pytest.fixture
def moon(tmp_path):
    box = write_mosaic(tmp_path / "moon.png")
    write_catalog(tmp_path / "catalog.csv", VISIBLE, INVISIBLE, HUGE)
    return box


def test_prepare_moon_labels_the_tiles_holding_visible_craters(tmp_path, moon):
    # When I prepare a mosaic with a visible, an invisible and a huge crater
    manifest = resolve(cmd_prepare_moon, MOON_SETTINGS)(
        mosaic=tmp_path / "moon.png", catalog=tmp_path / "catalog.csv", out=tmp_path / "tiles",
    )

    # Then every tile should be written along with a sidecar and a manifest
    assert len(manifest) == 8
    assert manifest.groups == ["moon"]
    assert read_manifest(tmp_path / "tiles" / "manifest.tsv") == manifest
    assert (tmp_path / "tiles" / "moon.tiles").exists()

    # And only the visible crater should be labelled, on its own tile
    labelled = {entry.stem: load_labels(entry.label) for entry in manifest if load_labels(entry.label)}
    assert list(labelled) == ["moon_x512_y0"]
    (label,) = labelled["moon_x512_y0"]
    expected = (moon.x - 512, moon.y, moon.x2 - 512, moon.y2)
    assert label.pixel_corners((256, 256)) == pytest.approx(expected, abs=1e-3)


def test_prepare_moon_tolerates_empty_catalogs(tmp_path, moon):
    write_catalog(tmp_path / "empty.csv")
    manifest = resolve(cmd_prepare_moon, MOON_SETTINGS)(
        mosaic=tmp_path / "moon.png", catalog=tmp_path / "empty.csv", out=tmp_path / "tiles",
    )
    assert len(manifest) == 8
    assert all(load_labels(entry.label) == [] for entry in manifest)


def test_prepare_aerial_crops_before_tiling(tmp_path):
    # Given that I have a 512px photo with one labelled box
    write_png(Raster.filled(512, 512, 90), tmp_path / "photos" / "site.png")
    box = Annotation.from_pixel_rect(PixelRect(100, 100, 40, 40), (512, 512))
    save_labels(tmp_path / "photos" / "site.txt", [box])

    # When I prepare it with a region of interest
    manifest = resolve(cmd_prepare_aerial, MOON_SETTINGS)(
        images=tmp_path / "photos", out=tmp_path / "tiles", roi=PixelRect(64, 64, 384, 384),
    )

    # Then the cropped image should be tiled
    assert [entry.stem for entry in manifest] == ["site_x0_y0", "site_x128_y0", "site_x0_y128", "site_x128_y128"]
    assert read_png(tmp_path / "tiles" / "site_x0_y0.png").dims == (256, 256)

    # And the box should follow the crop onto the first tile only
    (label,) = load_labels(tmp_path / "tiles" / "site_x0_y0.txt")
    assert label.pixel_corners((256, 256)) == pytest.approx((36, 36, 76, 76), abs=1e-3)
    assert load_labels(tmp_path / "tiles" / "site_x128_y0.txt") == []


def test_prepare_aerial_can_read_labels_from_elsewhere(tmp_path):
    write_png(Raster.filled(256, 256, 90), tmp_path / "photos" / "site.png")
    save_labels(tmp_path / "labels" / "site.txt", [Annotation(0, 0.5, 0.5, 0.25, 0.25)])
    resolve(cmd_prepare_aerial, MOON_SETTINGS)(
        images=tmp_path / "photos" / "site.png", out=tmp_path / "tiles", labels=tmp_path / "labels",
    )
    assert load_labels(tmp_path / "tiles" / "site_x0_y0.txt") == [Annotation(0, 0.5, 0.5, 0.25, 0.25)]


def test_a_perfect_detector_scores_one_through_tiling_and_stitching(tmp_path, stub_command):
    # Given that I have a 2048px scene with fifty craters
    img, labels = generate_scene(SceneSpec(width=2048, height=2048, n_craters=50, seed=3))
    write_png(img, tmp_path / "scene" / "scene.png")
    save_labels(tmp_path / "scene" / "scene.txt", labels)
    settings = {
        "raster.clahe": "false",
        "detect.detector": "external",
        "detect.command": stub_command("detect_perfect.py", "{in} {out}"),
        "detect.edge_margin": "2",
    }

    # When I tile it, detect on every tile and stitch the detections back
    resolve(cmd_prepare_aerial, settings)(images=tmp_path / "scene", out=tmp_path / "tiles")
    paths = resolve(cmd_detect, settings)(images=tmp_path / "tiles", out=tmp_path / "dets", stitch=True)
    report = resolve(cmd_eval, settings)(gt=tmp_path / "scene", detections=tmp_path / "dets", model_name="perfect")

    # Then every crater should be found exactly once
    assert paths == [tmp_path / "dets" / "scene.txt"]
    assert len(list((tmp_path / "dets" / "tiles").glob("*.txt"))) == 25
    assert (report.n_gt, report.n_det) == (50, 50)
    assert (report.precision, report.recall, report.ap50) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("seed", [0, 3, 7])
def test_the_baseline_detector_finds_synthetic_craters_through_tiling_and_stitching(seed):
    # Given that I have a noisy 2048px scene with fifty craters
    img, labels = generate_scene(SceneSpec(width=2048, height=2048, n_craters=50, noise_sigma=8.0, seed=seed))

    # When I run the blob detector on every tile and stitch the detections back
    grid = plan_tiles(img.width, img.height, 512, 64)
    per_tile = [(tile.origin, detect_blobs(tile.img)) for tile in extract_tiles(img, grid)]
    stitched = stitch_detections(per_tile, grid, 0.5)
    report = evaluate_dataset({"scene": labels}, {"scene": stitched})

    # Then nearly every crater should be found without many false alarms
    assert report.n_gt == 50
    assert report.recall >= 0.9
    assert report.precision >= 0.8


def test_stitching_needs_the_grid_sidecar(tmp_path):
    write_png(Raster.filled(512, 512, 90), tmp_path / "photos" / "site.png")
    settings = {"tiling.tile_size": "256", "tiling.overlap": "0", "raster.clahe": "false"}
    resolve(cmd_prepare_aerial, settings)(images=tmp_path / "photos", out=tmp_path / "tiles")
    (tmp_path / "tiles" / "site.tiles").unlink()

    with pytest.raises(MissingSource):
        resolve(cmd_detect, settings)(images=tmp_path / "tiles", out=tmp_path / "dets", stitch=True)


def test_evaluation_can_write_csv(tmp_path):
    write_png(Raster.filled(64, 64, 90), tmp_path / "gt" / "a.png")
    save_labels(tmp_path / "gt" / "a.txt", [Annotation(0, 0.5, 0.5, 0.25, 0.25)])
    save_detections(tmp_path / "dets" / "a.txt", [Detection(Annotation(0, 0.5, 0.5, 0.25, 0.25), 0.9)])

    report = resolve(cmd_eval)(gt=tmp_path / "gt", detections=tmp_path / "dets", out=tmp_path / "report.csv")

    assert report.ap50 == 1.0
    assert (tmp_path / "report.csv").read_text().splitlines()[1].startswith("model,1.000000,1.000000,1.000000")


def test_the_experiment_compares_every_composition(tmp_path, moon, stub_command):
    settings = {
        **MOON_SETTINGS,
        "detect.detector": "external",
        "detect.command": stub_command("detect_perfect.py", "{in} {out} --manifest {manifest}"),
        "evaluate.splits": "val,test",
    }

    # Given that I have prepared and split aerial tiles
    write_photos(tmp_path / "photos", 6)
    resolve(cmd_prepare_aerial, settings)(images=tmp_path / "photos", out=tmp_path / "aerial")
    split = resolve(cmd_split, settings)(manifest=tmp_path / "aerial" / "manifest.tsv", out=tmp_path / "split.tsv")
    assert [len(split.split(name)) for name in ("train", "val", "test")] == [4, 1, 1]

    # And moon tiles translated into the aerial domain
    resolve(cmd_prepare_moon, settings)(
        mosaic=tmp_path / "moon.png", catalog=tmp_path / "catalog.csv", out=tmp_path / "moon",
    )
    outputs = resolve(cmd_translate, settings)(
        source=tmp_path / "moon", target=tmp_path / "split.tsv", out=tmp_path / "synthetic",
    )
    assert len(outputs) == 8
    translated = load_labels(tmp_path / "synthetic" / "moon_x512_y0.txt")
    assert translated == load_labels(tmp_path / "moon" / "moon_x512_y0.txt")
    assert len(translated) == 1
    assert (tmp_path / "synthetic" / "cycle_loss.tsv").read_text().splitlines()[-1].startswith("mean\t")

    # When I run the experiment with a detector that always finds the ground truth
    reports = resolve(cmd_experiment, settings)(
        bomb=tmp_path / "split.tsv",
        out=tmp_path / "experiment",
        moon=tmp_path / "moon" / "manifest.tsv",
        synthetic=tmp_path / "synthetic" / "manifest.tsv",
    )

    # Then every composition should be evaluated on both splits
    assert [(r.model_name, r.split) for r in reports] == [
        (name, split) for name in ("bomb", "moon", "synthetic", "combined") for split in ("val", "test")
    ]
    assert all(r.ap50 == 1.0 and not r.vacuous for r in reports)

    # And the combined training set should hold the aerial and translated tiles
    combined = tmp_path / "experiment" / "combined" / "data" / "images" / "train"
    assert len(list(combined.glob("*.png"))) == 12

    # And the report should be written as text and CSV
    text = (tmp_path / "experiment" / "report.txt").read_text()
    assert text.splitlines()[0].split() == ["metric", "bomb", "moon", "synthetic", "combined"]
    assert "H3 combined vs bomb: mAP_test 1.000 vs 1.000 (+0.000)" in text
    assert len((tmp_path / "experiment" / "report.csv").read_text().splitlines()) == 9


def test_experiments_need_the_manifests_their_compositions_use(tmp_path):
    write_photos(tmp_path / "photos", 3)
    resolve(cmd_prepare_aerial, MOON_SETTINGS)(images=tmp_path / "photos", out=tmp_path / "aerial")
    resolve(cmd_split, MOON_SETTINGS)(manifest=tmp_path / "aerial" / "manifest.tsv", out=tmp_path / "split.tsv")

    with pytest.raises(MissingSource):
        resolve(cmd_experiment, MOON_SETTINGS)(bomb=tmp_path / "split.tsv", out=tmp_path / "experiment")


def test_annotate_transfer_copies_labels_onto_translations(tmp_path):
    # Given that I have a labelled tile and an unlabelled translation of it
    write_png(Raster.filled(32, 32, 10), tmp_path / "src" / "t.png")
    save_labels(tmp_path / "src" / "t.txt", [Annotation(0, 0.5, 0.5, 0.5, 0.5)])
    write_png(Raster.filled(32, 32, 200), tmp_path / "out" / "t.png")
    write_png(Raster.filled(32, 32, 200), tmp_path / "out" / "orphan.png")

    # When I transfer the labels
    written = cmd_annotate_transfer(tmp_path / "src", tmp_path / "out")

    # Then the translation should get them and the orphan should be skipped
    assert written == 1
    assert load_labels(tmp_path / "out" / "t.txt") == [Annotation(0, 0.5, 0.5, 0.5, 0.5)]
    assert not (tmp_path / "out" / "orphan.txt").exists()


def test_annotate_transfer_rejects_resized_translations(tmp_path):
    write_png(Raster.filled(32, 32, 10), tmp_path / "src" / "t.png")
    write_png(Raster.filled(16, 16, 200), tmp_path / "out" / "t.png")
    with pytest.raises(DimensionDrift):
        cmd_annotate_transfer(tmp_path / "src", tmp_path / "out")


def test_ensembles_fuse_models_and_deduplicate_on_the_ground(tmp_path):
    # Given that I have two models' detections on two georegistered images
    crater = Annotation(0, 0.5, 0.5, 0.2, 0.2)
    for model, confidence in (("a", 0.5), ("b", 0.5)):
        for stem in ("left", "right"):
            save_detections(tmp_path / model / f"{stem}.txt", [Detection(crater, confidence)])
    write_png(Raster.filled(100, 100, 0), tmp_path / "images" / "left.png")
    write_png(Raster.filled(100, 100, 0), tmp_path / "images" / "right.png")
    (tmp_path / "images" / "left.affine").write_text("1 0 0 0 1 0\n")
    (tmp_path / "images" / "right.affine").write_text("1 0 0 0 1 0\n")

    # When I ensemble them
    paths = resolve(cmd_ensemble)(
        inputs=[tmp_path / "a", tmp_path / "b"], out=tmp_path / "fused", images=tmp_path / "images",
    )

    # Then each image should get the noisy-OR of both models
    assert [p.name for p in paths] == ["left.txt", "right.txt"]
    assert load_detections(paths[0])[0].confidence == pytest.approx(0.75)

    # And the two images should agree on one crater on the ground
    (line,) = (tmp_path / "fused" / "world.txt").read_text().splitlines()
    assert line.split()[-1] == "left,right"
    assert float(line.split()[4]) == pytest.approx(1 - 0.25 * 0.25)


def test_overlays_need_their_detection_files(tmp_path):
    write_png(Raster.filled(32, 32, 10), tmp_path / "a.png")
    save_detections(tmp_path / "bomb.txt", [Detection(Annotation(0, 0.5, 0.5, 0.5, 0.5), 0.9)])

    assert cmd_overlay(tmp_path / "a.png", [("bomb", tmp_path / "bomb.txt")], tmp_path / "o.png").exists()
    with pytest.raises(MissingSource):
        cmd_overlay(tmp_path / "a.png", [("moon", tmp_path / "moon.txt")], tmp_path / "o.png")


def test_synthgen_writes_seeded_scenes(tmp_path):
    # Given that I want three small scenes rendered on two workers
    injector = injector_for(**{
        "synthgen.count": "3",
        "synthgen.width": "128",
        "synthgen.height": "128",
        "synthgen.n_craters": "3",
        "synthgen.radius_max": "8",
        "synthgen.seed": "10",
        "pipeline.jobs": "2",
    })

    # When I generate them
    try:
        paths = injector.get_resolver().resolve(cmd_synthgen)(out=tmp_path)
    finally:
        injector.close()

    # Then each should be written with its labels, named after its seed
    assert [p.name for p in paths] == ["scene_10.png", "scene_11.png", "scene_12.png"]
    assert all(len(load_labels(p.with_suffix(".txt"))) == 3 for p in paths)
    assert read_png(paths[0]) == generate_scene(SceneSpec(128, 128, 3, 6, 8, seed=10))[0]
