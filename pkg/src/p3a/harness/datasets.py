"""Synthetic dataset generators and file loaders for attack campaigns.

Two generator families stand in for image benchmarks at desk scale: Gaussian
blobs (fast, linearly separable) and procedural grid shapes (so the
transform-based attacks have spatial structure to work on). IDX and CSV
loaders accept external data; everything lands in [0, 1].
"""

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffnet import LabeledDataset
from ..numerics import GridShape

BLOB_SIGMA = 0.05  # cluster std; `separation` is measured in units of this

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class PreparedData:
    train: LabeledDataset
    test: LabeledDataset
    classes: int
    grid: GridShape | None


def split_dataset(ds: LabeledDataset, train_fraction: float, seed: int):
    """Deterministic shuffled train/test split."""
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train fraction must lie in [0, 1], got {train_fraction}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    k = int(round(train_fraction * len(ds)))
    tr, te = perm[:k], perm[k:]
    return (LabeledDataset(ds.x[tr].copy(), ds.y[tr].copy()),
            LabeledDataset(ds.x[te].copy(), ds.y[te].copy()))


def gen_blobs(classes: int, dim: int, separation: float, n: int, seed: int) -> LabeledDataset:
    """Gaussian clusters with centers at least separation*sigma apart, in [0,1]^dim."""
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")
    if n < classes:
        raise ValueError(f"need at least one sample per class ({n} < {classes})")
    rng = np.random.default_rng(seed)
    min_dist = separation * BLOB_SIGMA
    centers = []
    for _ in range(classes):
        for _attempt in range(10_000):
            c = rng.uniform(0.2, 0.8, size=dim)
            if all(np.linalg.norm(c - prev) >= min_dist for prev in centers):
                centers.append(c)
                break
        else:
            raise ValueError(
                f"cannot pack {classes} centers {min_dist:.3f} apart in [0.2,0.8]^{dim}"
            )
    y = np.arange(n) % classes
    x = np.empty((n, dim))
    for i in range(n):
        x[i] = centers[y[i]] + BLOB_SIGMA * rng.standard_normal(dim)
    return LabeledDataset(np.clip(x, 0.0, 1.0), y.astype(np.int64))


def _grid_templates(side: int) -> list[np.ndarray]:
    lo, hi = 0.1, 0.9
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    band = max(2, side // 8)
    cell = max(2, side // 4)
    center = (side - 1) / 2.0
    hbars = np.where((rr // band) % 2 == 0, hi, lo)
    vbars = np.where((cc // band) % 2 == 0, hi, lo)
    disk = np.where((rr - center) ** 2 + (cc - center) ** 2 <= (0.3 * side) ** 2, hi, lo)
    diagonal = np.where(np.abs(rr - cc) <= band, hi, lo)
    checker = np.where(((rr // cell) + (cc // cell)) % 2 == 0, hi, lo)
    return [hbars, vbars, disk, diagonal, checker]


def gen_grid_shapes(classes: int, side: int, n: int, seed: int,
                    noise: float = 0.05) -> LabeledDataset:
    """Procedural shape classes on a side x side grid, jittered and noised.

    Classes in order: horizontal bars, vertical bars, centered disk, diagonal
    band, checkerboard. noise=0 renders the templates verbatim (no jitter).
    """
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    if not 2 <= classes <= 5:
        raise ValueError(f"grid shapes supports 2..5 classes, got {classes}")
    if n < classes:
        raise ValueError(f"need at least one sample per class ({n} < {classes})")
    rng = np.random.default_rng(seed)
    templates = _grid_templates(side)[:classes]
    max_shift = side // 8
    y = np.arange(n) % classes
    x = np.empty((n, side * side))
    for i in range(n):
        img = templates[y[i]]
        if noise > 0:
            dr, dc = rng.integers(-max_shift, max_shift + 1, size=2)
            img = np.roll(np.roll(img, int(dr), axis=0), int(dc), axis=1)
            img = img + rng.normal(0.0, noise, size=img.shape)
        x[i] = np.clip(img, 0.0, 1.0).ravel()
    return LabeledDataset(x, y.astype(np.int64))


class _IdxReader:
    """Cursor over IDX bytes that reports the offset of any truncation."""

    def __init__(self, path: Path):
        raw = path.read_bytes()
        if raw[:2] == b"\x1f\x8b":
            raw = gzip.decompress(raw)
        self.path = path
        self.raw = raw
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.raw):
            raise ValueError(
                f"{self.path}: truncated IDX file, needed {count} bytes at offset {self.offset}"
            )
        out = self.raw[self.offset:self.offset + count]
        self.offset += count
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


def load_idx(images_path, labels_path) -> LabeledDataset:
    """MNIST-style IDX pair: big-endian headers, unsigned-byte pixels scaled by 1/255."""
    img = _IdxReader(Path(images_path))
    magic = img.u32()
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(
            f"{images_path}: malformed header, magic 0x{magic:08x} != 0x{IDX_IMAGES_MAGIC:08x}"
        )
    count, rows, cols = img.u32(), img.u32(), img.u32()
    pixels = np.frombuffer(img.take(count * rows * cols), dtype=np.uint8)

    lab = _IdxReader(Path(labels_path))
    magic = lab.u32()
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(
            f"{labels_path}: malformed header, magic 0x{magic:08x} != 0x{IDX_LABELS_MAGIC:08x}"
        )
    lab_count = lab.u32()
    if lab_count != count:
        raise ValueError(f"{labels_path}: {lab_count} labels for {count} images")
    labels = np.frombuffer(lab.take(lab_count), dtype=np.uint8)

    x = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    ds = LabeledDataset(x, labels.astype(np.int64))
    ds.grid = GridShape(rows, cols, 1)
    return ds


def load_csv(path) -> LabeledDataset:
    """Rows of `label, v1, ..., vm` with labels 0..K-1 and values in [0, 1]."""
    path = Path(path)
    rows = []
    labels = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                label = float(fields[0])
                values = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: unparseable row") from exc
            if label != int(label) or label < 0:
                raise ValueError(f"{path}:{lineno}: label {fields[0]} out of range")
            if not values:
                raise ValueError(f"{path}:{lineno}: row has a label but no values")
            if min(values) < 0.0 or max(values) > 1.0:
                raise ValueError(f"{path}:{lineno}: value outside [0, 1]")
            if rows and len(values) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: inconsistent row width")
            labels.append(int(label))
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64))


def _square_grid_or_none(dim: int) -> GridShape | None:
    side = math.isqrt(dim)
    return GridShape(side, side, 1) if side * side == dim else None


def prepare(spec: dict) -> PreparedData:
    """Build (train, test, classes, grid) from a dataset-spec mapping.

    kinds: blobs {classes, dim, separation, n}, grid_shapes {classes, side, n,
    noise}, idx {images, labels}, csv {path}; all take seed and split (train
    fraction). An explicit "grid": [h, w, c] overrides the inferred layout.
    """
    kind = spec.get("kind")
    seed = int(spec.get("seed", 0))
    split = float(spec.get("split", 0.5))
    if kind == "blobs":
        ds = gen_blobs(int(spec["classes"]), int(spec["dim"]), float(spec["separation"]),
                       int(spec["n"]), seed)
        grid = _square_grid_or_none(int(spec["dim"]))
        classes = int(spec["classes"])
    elif kind == "grid_shapes":
        side = int(spec["side"])
        ds = gen_grid_shapes(int(spec["classes"]), side, int(spec["n"]), seed,
                             float(spec.get("noise", 0.05)))
        grid = GridShape(side, side, 1)
        classes = int(spec["classes"])
    elif kind == "idx":
        ds = load_idx(spec["images"], spec["labels"])
        grid = ds.grid
        classes = int(ds.y.max()) + 1
    elif kind == "csv":
        ds = load_csv(spec["path"])
        grid = _square_grid_or_none(ds.x.shape[1])
        classes = int(ds.y.max()) + 1
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if "grid" in spec:
        h, w, c = spec["grid"]
        grid = GridShape(int(h), int(w), int(c))
        grid.check_matches(ds.x.shape[1])
    train, test = split_dataset(ds, split, seed)
    return PreparedData(train=train, test=test, classes=classes, grid=grid)
