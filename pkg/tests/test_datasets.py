import json

import numpy as np
import pytest
from scipy.io import savemat

from CrowdKit.converters import convert, convert_jhu, convert_qnrf, jhu_points, shanghaitech_points
from CrowdKit.datasets import (
    AnnotatedImage,
    DatasetManifest,
    Split,
    ingest,
    policy_for,
    subsample,
    write_manifest,
)
from CrowdKit.errors import BoundsError, EmptyDataset, ParseError
from CrowdKit.geometry import ImageRef


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" if not isinstance(r, str) else r + "\n" for r in records))
    return path


def record(name, points=(), split="test", width=100, height=80):
    return {"image": name, "width": width, "height": height, "points": [list(p) for p in points], "split": split}


def test_counts_follow_the_points(tmp_path):
    manifest_path = write_lines(
        tmp_path / "small.jsonl",
        [
            record("a.jpg", [(1, 1)] * 10),
            record("b.jpg"),
            record("c.jpg", [(50, 40)] * 250, split="train"),
        ],
    )

    manifest = ingest(manifest_path)

    assert manifest.counts() == [10, 0, 250]
    assert manifest.counts(Split.TEST) == [10, 0]
    assert manifest.name == "small"
    assert manifest.image_refs(Split.TRAIN) == [ImageRef(str(tmp_path / "c.jpg"), 100, 80)]


def test_points_on_the_border_are_inside(tmp_path):
    manifest_path = write_lines(tmp_path / "m.jsonl", [record("a.jpg", [(0, 0), (100, 80)])])

    assert ingest(manifest_path).counts() == [2]


def test_points_outside_the_image(tmp_path):
    manifest_path = write_lines(tmp_path / "m.jsonl", [record("a.jpg", [(-1, 5), (3, 3)])])

    with pytest.raises(BoundsError) as info:
        ingest(manifest_path)

    assert info.value.points == [(-1.0, 5.0)]


def test_split_sizes_and_policy_from_header(tmp_path):
    records = [{"dataset": "ucf_qnrf"}]
    records += [record("train_{}.jpg".format(i), split="train") for i in range(1201)]
    records += [record("test_{}.jpg".format(i)) for i in range(334)]

    manifest = ingest(write_lines(tmp_path / "qnrf.jsonl", records))

    assert manifest.name == "ucf_qnrf"
    assert len(manifest.split(Split.TRAIN)) == 1201
    assert len(manifest.split("test")) == 334
    assert (manifest.default_p, manifest.resize_max_long) == (4, 2048)


def test_header_overrides_policy(tmp_path):
    records = [{"dataset": "ucf_qnrf", "default_p": 3, "resize_max_long": 1024}, record("a.jpg")]

    manifest = ingest(write_lines(tmp_path / "m.jsonl", records))

    assert (manifest.default_p, manifest.resize_max_long) == (3, 1024)


def test_file_stem_selects_policy(tmp_path):
    manifest = ingest(write_lines(tmp_path / "ucf_cc_50.jsonl", [record("a.jpg")]))

    assert (manifest.default_p, manifest.resize_max_long) == policy_for("ucf_cc_50") == (4, None)
    assert policy_for("mall") == (3, None)


@pytest.mark.parametrize(
    "bad, message",
    [
        ("{not json", "invalid JSON"),
        ("[1, 2]", "JSON object"),
        (json.dumps({"points": []}), "no 'image'"),
        (json.dumps(record("a.jpg", split="holdout")), "unknown split"),
        (json.dumps({"image": "a.jpg", "width": "wide", "height": 3}), "bad image size"),
        (json.dumps({**record("a.jpg"), "points": [[1, 2, 3]]}), "[x, y]"),
        (json.dumps({"dataset": "late"}), "header"),
    ],
)
def test_parse_errors_carry_the_line(tmp_path, bad, message):
    manifest_path = write_lines(tmp_path / "m.jsonl", [record("a.jpg"), "", bad])

    with pytest.raises(ParseError, match="line 3") as info:
        ingest(manifest_path)

    assert info.value.line == 3
    assert message in str(info.value)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest not found"):
        ingest(tmp_path / "nope.jsonl")


def test_image_size_is_read_from_disk(tmp_path, write_png):
    write_png("a.png", np.zeros((30, 40, 3)))
    manifest_path = write_lines(tmp_path / "m.jsonl", [{"image": "a.png", "points": [[39, 29]]}])

    image = ingest(manifest_path).images[0].image

    assert (image.width, image.height) == (40, 30)


def test_write_manifest_uses_relative_paths(tmp_path):
    images = [
        AnnotatedImage(ImageRef(str(tmp_path / "imgs" / "a.jpg"), 100, 80), [[1.5, 2.5]], Split.TRAIN),
        AnnotatedImage(ImageRef(str(tmp_path / "imgs" / "b.jpg"), 100, 80), [], Split.TEST),
    ]

    path = write_manifest(tmp_path / "out.jsonl", images, name="shtech_b", default_p=4)
    lines = [json.loads(line) for line in path.read_text().splitlines()]

    assert lines[0] == {"dataset": "shtech_b", "default_p": 4}
    assert lines[1]["image"] == "imgs/a.jpg"
    manifest = ingest(path)
    assert manifest.default_p == 4
    assert manifest.counts() == [1, 0]
    np.testing.assert_array_equal(manifest.images[0].points, [[1.5, 2.5]])


def test_manifest_rejects_unsupported_grid():
    with pytest.raises(ValueError):
        DatasetManifest("x", [], default_p=5)


def test_subsample_is_seeded_and_ordered():
    items = list(range(100))

    first = subsample(items, 0.25, seed=3)

    assert first == subsample(items, 0.25, seed=3)
    assert len(first) == 25
    assert first == sorted(first)
    assert subsample(items, 1.0) == items
    assert len(subsample(items, 0.001)) == 1
    assert len(subsample(list(range(10)), 0.25)) == 3


def test_subsample_rejects_bad_input():
    with pytest.raises(EmptyDataset):
        subsample([], 0.5)
    with pytest.raises(ValueError):
        subsample([1, 2], 0.0)


def test_convert_qnrf(tmp_path, write_png):
    for folder, stem, points in (("Train", "img_0001", [[5, 5], [10, 12]]), ("Test", "img_0002", [[0, 0]])):
        (tmp_path / folder).mkdir()
        write_png("{}/{}.jpg".format(folder, stem), np.zeros((20, 30, 3)))
        savemat(tmp_path / folder / "{}_ann.mat".format(stem), {"annPoints": np.array(points, dtype=np.float64)})

    images = convert_qnrf(tmp_path)

    assert [i.split for i in images] == [Split.TRAIN, Split.TEST]
    assert [i.count for i in images] == [2, 1]


def test_convert_clips_border_points(tmp_path, write_png):
    (tmp_path / "test" / "images").mkdir(parents=True)
    (tmp_path / "test" / "gt").mkdir()
    write_png("test/images/0001.jpg", np.zeros((20, 30, 3)))
    (tmp_path / "test" / "gt" / "0001.txt").write_text("4 5 2 2 0 0\n31 21 2 2 0 0\n")

    images = convert_jhu(tmp_path)

    np.testing.assert_array_equal(images[0].points, [[4, 5], [30, 20]])
    assert images[0].split is Split.TEST


def test_convert_writes_a_named_manifest(tmp_path, write_png):
    for stem in ("1", "2"):
        write_png("{}.jpg".format(stem), np.zeros((20, 30, 3)))
        savemat(tmp_path / "{}_ann.mat".format(stem), {"annPoints": np.array([[1.0, 1.0]])})

    manifest = ingest(convert("ucf_cc_50", tmp_path, tmp_path / "out" / "cc50.jsonl"))

    assert manifest.name == "ucf_cc_50"
    assert manifest.default_p == 4
    assert manifest.counts(Split.TEST) == [1, 1]
    with pytest.raises(ValueError):
        convert("mall", tmp_path, tmp_path / "x.jsonl")


def test_jhu_bad_row(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("1 2 3 3 0 0\nfoo\n")

    with pytest.raises(ParseError) as info:
        jhu_points(path)

    assert info.value.line == 2


def test_shanghaitech_struct():
    location = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    inner = np.zeros((1, 1), dtype=[("location", object), ("number", object)])
    inner["location"][0, 0] = location
    inner["number"][0, 0] = np.array([[3]])
    outer = np.empty((1, 1), dtype=object)
    outer[0, 0] = inner

    points = shanghaitech_points({"image_info": outer})

    np.testing.assert_array_equal(points, location)
