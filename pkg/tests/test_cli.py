import logging

import pytest
import typer
from typer.testing import CliRunner

from craterkit import (
    Annotation, Detection, PixelRect, Raster, __version__, load_labels, save_detections, save_labels, write_png
)
from craterkit.cli import app, parse_named_paths, parse_overrides, parse_roi
from craterkit.errors import ValidationError

runner = CliRunner()


@pytest.fixture(autouse=True)
def release_log_handlers():
    yield
    logger = logging.getLogger("craterkit")
    logger.handlers.clear()
    logger.propagate = True


def test_version_is_printed():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert result.stdout.strip() == f"craterkit {__version__}"


@pytest.mark.parametrize("pairs,extra,expected", [
    ([], [], {}),
    (["tiling.overlap=32"], [], {"tiling.overlap": "32"}),
    ([], ["--tiling.overlap", "32"], {"tiling.overlap": "32"}),
    ([], ["--tiling.overlap=32", "--raster.clahe", "off"], {"tiling.overlap": "32", "raster.clahe": "off"}),
    (["tiling.overlap=16"], ["--tiling.overlap=32"], {"tiling.overlap": "32"}),
    (["detect.command=yolo a=b"], [], {"detect.command": "yolo a=b"}),
])
def test_overrides_are_parsed(pairs, extra, expected):
    assert parse_overrides(pairs, extra) == expected


@pytest.mark.parametrize("pairs,extra", [
    (["overlap=32"], []),
    (["tiling.overlap"], []),
    ([], ["stray"]),
    ([], ["--verbose"]),
    ([], ["--tiling.overlap"]),
])
def test_malformed_overrides_are_rejected(pairs, extra):
    with pytest.raises(ValidationError) as e:
        parse_overrides(pairs, extra)

    assert list(e.value.reasons) == ["overrides"]


def test_regions_of_interest_are_parsed():
    assert parse_roi(None) is None
    assert parse_roi("10,20,300,400") == PixelRect(10, 20, 300, 400)
    with pytest.raises(typer.BadParameter):
        parse_roi("10,20,300")


def test_named_paths_are_parsed():
    assert [(name, str(path)) for name, path in parse_named_paths(["bomb=a.txt"])] == [("bomb", "a.txt")]
    with pytest.raises(typer.BadParameter):
        parse_named_paths(["a.txt"])


def test_synthgen_accepts_settings_after_the_command(tmp_path):
    # When I run synthgen with overrides given as flags and as --set
    result = runner.invoke(app, [
        "--set", "synthgen.width=96",
        "synthgen", "--out", str(tmp_path),
        "--synthgen.count=2", "--synthgen.height", "96", "--synthgen.n_craters=2", "--synthgen.radius_max=8",
    ])

    # Then the scenes should be written at the requested size
    assert result.exit_code == 0, result.output
    assert "2 scenes written" in result.stdout
    assert sorted(p.name for p in tmp_path.glob("*.png")) == ["scene_0.png", "scene_1.png"]
    assert len(load_labels(tmp_path / "scene_0.txt")) == 2


def test_invalid_settings_exit_with_an_error(tmp_path):
    result = runner.invoke(app, ["synthgen", "--out", str(tmp_path), "--tiling.overlap=1024"])
    assert result.exit_code == 1
    assert list(tmp_path.iterdir()) == []


def test_missing_configuration_files_exit_with_an_error(tmp_path):
    result = runner.invoke(app, ["--config", str(tmp_path / "idontexist.toml"), "synthgen", "--out", str(tmp_path)])
    assert result.exit_code == 1


def test_prepare_aerial_and_eval(tmp_path):
    # Given that I have a labelled photo
    write_png(Raster.filled(300, 300, 90), tmp_path / "photos" / "site.png")
    save_labels(tmp_path / "photos" / "site.txt", [Annotation(0, 0.5, 0.5, 0.2, 0.2)])

    # When I prepare it with a region of interest
    result = runner.invoke(app, [
        "prepare-aerial", str(tmp_path / "photos"), "--out", str(tmp_path / "tiles"), "--roi", "22,22,256,256",
        "--tiling.tile_size=256", "--tiling.overlap=0",
    ])

    # Then I should get a single tile
    assert result.exit_code == 0, result.output
    assert f"1 tiles written to {tmp_path / 'tiles'}" in result.stdout.splitlines()

    # When I evaluate a perfect detection of its crater
    (label,) = load_labels(tmp_path / "tiles" / "site_x0_y0.txt")
    save_detections(tmp_path / "dets" / "site_x0_y0.txt", [Detection(label, 0.9)])
    result = runner.invoke(app, ["eval", str(tmp_path / "tiles"), str(tmp_path / "dets"), "--name", "perfect"])

    # Then the report should show it
    assert result.exit_code == 0, result.output
    rows = [line.split() for line in result.stdout.splitlines() if line.startswith("mAP_test")]
    assert rows == [["mAP_test", "1.000"]]


def test_bad_regions_of_interest_are_usage_errors(tmp_path):
    write_png(Raster.filled(64, 64, 90), tmp_path / "site.png")
    result = runner.invoke(app, ["prepare-aerial", str(tmp_path / "site.png"), "--out", str(tmp_path), "--roi", "1,2"])
    assert result.exit_code == 2
