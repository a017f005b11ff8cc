import json
import logging

import numpy as np
import pytest
import yaml

from CrowdKit.cli import main
from CrowdKit.synthetic import TilePlant, make_ring_dataset, tile_grid_image


@pytest.fixture(autouse=True)
def drop_cli_log_handlers():
    root = logging.getLogger()
    before = set(root.handlers)
    yield
    for handler in set(root.handlers) - before:
        if type(handler) is logging.StreamHandler:
            root.removeHandler(handler)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "run"


def cli(out_dir, *args, **overrides):
    argv = list(args) + ["--out-dir", str(out_dir), "--set", "encoder.backend=mock"]
    for key, value in overrides.items():
        argv += ["--set", "{}={}".format(key.replace("__", "."), value)]
    return main(argv)


def test_train_writes_a_checkpoint(tmp_path, out_dir):
    rings = make_ring_dataset(tmp_path / "data", n_images=2)

    status = cli(out_dir, "train", data__train_manifest=rings, train__epochs=2, train__learning_rate="1e-4")

    assert status == 0
    manifest = json.loads((out_dir / "checkpoint" / "manifest.json").read_text())
    assert manifest["dataset"] == "rings"
    assert manifest["backend"] == "mock"
    assert manifest["epochs_completed"] == 2
    assert len((out_dir / "train_log.jsonl").read_text().splitlines()) == 2
    assert not (out_dir / ".lock").exists()

    run = json.loads((out_dir / "run.json").read_text())
    assert run["command"] == "train"
    config = yaml.safe_load((out_dir / "config.yaml").read_text())
    assert config["train"]["epochs"] == 2
    assert config["train"]["learning_rate"] == 1e-4


def test_missing_manifest_is_a_usage_error(tmp_path, out_dir, capsys):
    status = cli(out_dir, "evaluate", data__test_manifest=tmp_path / "nope.jsonl")

    assert status == 2
    assert "manifest not found" in capsys.readouterr().err


def test_unset_manifest_is_a_usage_error(out_dir, capsys):
    assert cli(out_dir, "train") == 2
    assert "data.train_manifest is not set" in capsys.readouterr().err


def test_unknown_config_key(out_dir, capsys):
    assert cli(out_dir, "train", train__warmup=3) == 2
    assert "warmup" in capsys.readouterr().err


def test_infer_single_image(tmp_path, out_dir):
    image, _ = tile_grid_image(tmp_path / "one.png", [TilePlant(count=90)], p=1)

    assert cli(out_dir, "infer", image.path, "-p", "1") == 0

    records = [json.loads(line) for line in (out_dir / "predictions.jsonl").read_text().splitlines()]
    assert len(records) == 1
    assert records[0]["total"] == 90
    assert records[0]["P"] == 1
    assert "timing" not in records[0]
    assert (out_dir / "timings.jsonl").exists()


def test_infer_directory_with_a_corrupt_image(tmp_path, out_dir):
    folder = tmp_path / "images"
    tile_grid_image(folder / "a.png", [TilePlant(count=20)] * 9, p=3)
    tile_grid_image(folder / "b.png", [TilePlant(count=55)] * 9, p=3)
    (folder / "c.png").write_bytes(b"truncated")

    status = cli(out_dir, "infer", str(folder))

    assert status == 1
    records = [json.loads(line) for line in (out_dir / "predictions.jsonl").read_text().splitlines()]
    assert [r["total"] for r in records] == [180, 495]


def test_evaluate_is_reproducible(oracle_manifest_path, out_dir):
    assert cli(out_dir, "evaluate", data__test_manifest=oracle_manifest_path) == 0
    first = {name: (out_dir / name).read_bytes() for name in ("report.json", "predictions.jsonl", "run.json")}

    assert cli(out_dir, "evaluate", data__test_manifest=oracle_manifest_path) == 0

    report = json.loads(first["report.json"])
    assert report["mae"] == 0.0
    assert report["n_images"] == 20
    assert "throughput_fps" not in report
    assert "throughput_fps" in json.loads((out_dir / "throughput.json").read_text())
    for name, content in first.items():
        assert (out_dir / name).read_bytes() == content


def test_seed_flag_changes_the_config_hash(oracle_manifest_path, tmp_path):
    hashes = []
    for seed in (0, 1):
        out = tmp_path / "seed_{}".format(seed)
        assert cli(out, "evaluate", "--seed", str(seed), data__test_manifest=oracle_manifest_path) == 0
        hashes.append(json.loads((out / "run.json").read_text())["config_hash"])

    assert hashes[0] != hashes[1]


def test_cross_eval_on_one_dataset(oracle_manifest_path, out_dir, capsys):
    status = cli(
        out_dir,
        "cross-eval",
        data__train_manifest=oracle_manifest_path,
        data__test_manifest=oracle_manifest_path,
    )

    assert status == 0
    assert "both sides" in capsys.readouterr().err
    report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
    assert report["label"] == "synthetic→synthetic"


def test_ablate_and_plot(oracle_manifest_path, out_dir, tmp_path):
    assert cli(out_dir, "ablate", "patch_number", "3", "4", "5", data__test_manifest=oracle_manifest_path) == 0

    lines = (out_dir / "ablation.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("kind,setting,n_images,mae,mse")

    plot_dir = tmp_path / "plots_run"
    assert cli(plot_dir, "plot", str(out_dir / "series.json")) == 0
    assert sorted(p.name for p in (plot_dir / "plots").iterdir()) == ["patch_number_mae.png", "patch_number_mse.png"]


def test_plot_needs_reports(out_dir, capsys):
    assert cli(out_dir, "plot") == 2
    assert "at least one report" in capsys.readouterr().err


def test_busy_output_directory(out_dir, capsys):
    out_dir.mkdir()
    (out_dir / ".lock").write_text("123")

    assert cli(out_dir, "plot") == 1
    assert "in use" in capsys.readouterr().err
    assert (out_dir / ".lock").exists()


def test_convert(tmp_path, out_dir, write_png):
    root = tmp_path / "jhu"
    (root / "val" / "images").mkdir(parents=True)
    (root / "val" / "gt").mkdir()
    write_png("jhu/val/images/0001.jpg", np.zeros((40, 60, 3)))
    (root / "val" / "gt" / "0001.txt").write_text("10 10 4 4 0 0\n")

    assert cli(out_dir, "convert", "jhu_crowd", str(root), str(tmp_path / "jhu.jsonl")) == 0

    lines = (tmp_path / "jhu.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == {"dataset": "jhu_crowd"}
    assert json.loads(lines[1])["split"] == "val"
