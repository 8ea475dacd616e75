import gzip
import struct

import numpy as np
import pytest

from p3a import diffnet as dn
from p3a.harness import datasets
from p3a.harness.datasets import (
    gen_blobs, gen_grid_shapes, load_csv, load_idx, split_dataset,
)


def write_idx_pair(tmp_path, images, labels):
    """Assemble spec-conformant IDX bytes by hand (independent of the loader)."""
    n, rows, cols = images.shape
    img_bytes = struct.pack(">IIII", 0x00000803, n, rows, cols) + images.tobytes()
    lab_bytes = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    ipath = tmp_path / "imgs.idx"
    lpath = tmp_path / "labs.idx"
    ipath.write_bytes(img_bytes)
    lpath.write_bytes(lab_bytes)
    return ipath, lpath


# -------------------------------------------------------------------- blobs

def test_blobs_deterministic_and_in_range():
    a = gen_blobs(classes=3, dim=5, separation=6.0, n=60, seed=11)
    b = gen_blobs(classes=3, dim=5, separation=6.0, n=60, seed=11)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.x.min() >= 0.0 and a.x.max() <= 1.0
    assert not np.array_equal(a.x, gen_blobs(3, 5, 6.0, 60, 12).x)


def test_blobs_separable_trains_to_99():
    # DERIVED: 6-sigma separation makes a linear model essentially perfect
    ds = gen_blobs(classes=2, dim=8, separation=6.0, n=120, seed=0)
    arch = dn.mlp(8, [], 2)
    theta = dn.train_sgd(arch, ds, epochs=15, lr=0.5, seed=0)
    assert dn.accuracy(arch, theta, ds) >= 0.99


def test_blobs_infeasible_packing():
    # 40 centers 0.45 apart cannot fit in a unit interval segment
    with pytest.raises(ValueError, match="pack"):
        gen_blobs(classes=40, dim=1, separation=9.0, n=40, seed=0)


# --------------------------------------------------------------- grid shapes

def test_grid_shapes_noise_zero_gives_templates():
    ds = gen_grid_shapes(classes=4, side=16, n=8, seed=5, noise=0.0)
    templates = datasets._grid_templates(16)
    for i in range(8):
        assert np.array_equal(ds.x[i].reshape(16, 16), templates[i % 4])


def test_grid_shapes_labels_balanced():
    ds = gen_grid_shapes(classes=3, side=8, n=10, seed=1)
    counts = np.bincount(ds.y, minlength=3)
    assert counts.max() - counts.min() <= 1


def test_grid_shapes_range_and_validation():
    ds = gen_grid_shapes(classes=5, side=12, n=25, seed=2)
    assert ds.x.min() >= 0.0 and ds.x.max() <= 1.0
    with pytest.raises(ValueError, match="side"):
        gen_grid_shapes(classes=2, side=7, n=10, seed=0)
    with pytest.raises(ValueError, match="classes"):
        gen_grid_shapes(classes=6, side=16, n=10, seed=0)


def test_grid_shapes_mlp_reaches_95():
    # DERIVED: run the trainer on the procedural classes
    ds = gen_grid_shapes(classes=4, side=16, n=400, seed=3)
    train, test = split_dataset(ds, 0.7, 3)
    arch = dn.mlp(256, [32], 4)
    theta = dn.train_sgd(arch, train, epochs=20, lr=0.05, seed=3)
    assert dn.accuracy(arch, theta, test) >= 0.95


# ----------------------------------------------------------------------- idx

def test_load_idx_roundtrip_and_scaling(tmp_path):
    rng = np.random.default_rng(4)
    images = rng.integers(0, 256, size=(10, 4, 3), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[0, 0, 1] = 0
    labels = rng.integers(0, 3, size=10, dtype=np.uint8)
    ipath, lpath = write_idx_pair(tmp_path, images, labels)
    ds = load_idx(ipath, lpath)
    assert len(ds) == 10
    assert ds.x[0, 0] == 1.0
    assert ds.x[0, 1] == 0.0
    assert np.array_equal(ds.y, labels)
    assert np.allclose(ds.x, images.reshape(10, 12) / 255.0)
    assert ds.grid.height == 4 and ds.grid.width == 3


def test_load_idx_gzip(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    ipath, lpath = write_idx_pair(tmp_path, images, labels)
    gz = tmp_path / "imgs.idx.gz"
    gz.write_bytes(gzip.compress(ipath.read_bytes()))
    ds = load_idx(gz, lpath)
    assert len(ds) == 2


def test_load_idx_bad_magic(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2) + b"\x00" * 4)
    lab = tmp_path / "lab.idx"
    lab.write_bytes(struct.pack(">II", 0x00000801, 1) + b"\x00")
    with pytest.raises(ValueError, match="malformed header"):
        load_idx(bad, lab)


def test_load_idx_truncated_names_offset(tmp_path):
    images = np.zeros((4, 2, 2), dtype=np.uint8)
    labels = np.zeros(4, dtype=np.uint8)
    ipath, lpath = write_idx_pair(tmp_path, images, labels)
    ipath.write_bytes(ipath.read_bytes()[:-6])  # drop part of the pixel payload
    with pytest.raises(ValueError, match="offset 16"):
        load_idx(ipath, lpath)


def test_load_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    labels = np.zeros(3, dtype=np.uint8)
    ipath, lpath = write_idx_pair(tmp_path, images, labels)
    lpath.write_bytes(struct.pack(">II", 0x00000801, 2) + b"\x00\x00")
    with pytest.raises(ValueError, match="labels for"):
        load_idx(ipath, lpath)


# ----------------------------------------------------------------------- csv

def test_load_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("0, 0.1, 0.2\n1, 0.9, 1.0\n\n0, 0.0, 0.5\n")
    ds = load_csv(path)
    assert len(ds) == 3
    assert ds.y.tolist() == [0, 1, 0]
    assert ds.x[1].tolist() == [0.9, 1.0]


@pytest.mark.parametrize("row,msg", [
    ("-1, 0.5", "out of range"),
    ("0, 1.5", "outside"),
    ("0, oops", "unparseable"),
    ("0, 0.1, 0.2\n1, 0.3", "width"),
])
def test_load_csv_rejects_bad_rows(tmp_path, row, msg):
    path = tmp_path / "d.csv"
    path.write_text(row + "\n")
    with pytest.raises(ValueError, match=msg):
        load_csv(path)


# -------------------------------------------------------------------- prepare

def test_prepare_blobs_and_split():
    prep = datasets.prepare({"kind": "blobs", "classes": 2, "dim": 16,
                             "separation": 6.0, "n": 50, "seed": 9, "split": 0.6})
    assert len(prep.train) == 30 and len(prep.test) == 20
    assert prep.classes == 2
    assert prep.grid.height == 4  # 16 = 4x4 inferred
    prep2 = datasets.prepare({"kind": "blobs", "classes": 2, "dim": 16,
                              "separation": 6.0, "n": 50, "seed": 9, "split": 0.6})
    assert np.array_equal(prep.test.x, prep2.test.x)


def test_prepare_grid_override_and_unknown_kind():
    prep = datasets.prepare({"kind": "grid_shapes", "classes": 2, "side": 8,
                             "n": 20, "seed": 0, "grid": [8, 8, 1]})
    assert prep.grid.size == 64
    with pytest.raises(ValueError, match="unknown dataset kind"):
        datasets.prepare({"kind": "mnist"})
