"""Dataset loading, synthesis, splitting and subsetting.

Datasets are immutable after construction: features are a stacked float64
array [N, ...], labels an int64 array [N]. Image-provenance features live in
[0, 1]; loaders enforce this. Synthetic point clouds are unbounded unless
rescaled (see affine_rescale).
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROVENANCES = ("cifar10-binary", "idx", "synthetic", "derived")
_IMAGE_PROVENANCES = ("cifar10-binary", "idx")

CIFAR10_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """A file failed magic/length validation."""


class EmptyClassError(ValueError):
    """A class-restricted subset came up empty."""


@dataclass
class Sample:
    features: np.ndarray
    label: int


class Dataset:
    """Ordered, immutable sample collection with a fixed class count."""

    def __init__(self, features, labels, class_count, name="", provenance="synthetic"):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if len(features) == 0:
            raise ValueError("dataset must be nonempty")
        if len(features) != len(labels):
            raise ValueError(f"{len(features)} feature rows vs {len(labels)} labels")
        if class_count < 2:
            raise ValueError("class_count must be >= 2")
        if labels.min() < 0 or labels.max() >= class_count:
            raise ValueError(
                f"labels must lie in [0, {class_count}); found {labels.min()}..{labels.max()}"
            )
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        if provenance in _IMAGE_PROVENANCES and (features.min() < 0 or features.max() > 1):
            raise ValueError("image features must lie in [0, 1]")
        self.features = features
        self.features.setflags(write=False)
        self.labels = labels
        self.labels.setflags(write=False)
        self.class_count = int(class_count)
        self.name = name
        self.provenance = provenance

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i) -> Sample:
        return Sample(self.features[i], int(self.labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @property
    def feature_shape(self):
        return self.features.shape[1:]

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices],
                       self.class_count,
                       name=name if name is not None else self.name,
                       provenance=self.provenance)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    rng_seed: int = 0

    def validate(self):
        for field_name, f in (("train_fraction", self.train_fraction),
                              ("val_fraction", self.val_fraction)):
            if not 0.0 < f < 1.0:
                raise ValueError(f"{field_name} must lie in (0, 1), got {f}")
        if self.train_fraction + self.val_fraction > 1.0 + 1e-12:
            raise ValueError("train_fraction + val_fraction exceeds 1")


def split(ds: Dataset, spec: SplitSpec):
    """Seeded disjoint partition (train, val, test_or_None); union-complete."""
    spec.validate()
    n = len(ds)
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.val_fraction * n))
    if n_train < 1 or n_val < 1:
        raise ValueError(f"split of {n} samples leaves an empty part")
    if n_train + n_val > n:
        raise ValueError("split fractions exceed dataset size")
    order = np.random.default_rng(spec.rng_seed).permutation(n)
    train = ds.subset(order[:n_train], name=f"{ds.name}/train")
    val = ds.subset(order[n_train:n_train + n_val], name=f"{ds.name}/val")
    rest = order[n_train + n_val:]
    test = ds.subset(rest, name=f"{ds.name}/test") if len(rest) else None
    return train, val, test


def class_subset(ds: Dataset, cls: int) -> Dataset:
    idx = np.flatnonzero(ds.labels == cls)
    if len(idx) == 0:
        raise EmptyClassError(f"class {cls} has no samples in {ds.name!r}")
    return ds.subset(idx, name=f"{ds.name}/class{cls}")


def draw_class_samples(ds: Dataset, cls: int, count: int, rng_seed: int) -> Dataset:
    """First `count` samples of a class after a seeded shuffle (user-holding draw)."""
    members = class_subset(ds, cls)
    if not 1 <= count <= len(members):
        raise ValueError(f"count must lie in [1, {len(members)}], got {count}")
    order = np.random.default_rng(rng_seed).permutation(len(members))
    return members.subset(order[:count], name=f"{ds.name}/class{cls}/drawn")


def synth_blobs(class_count, per_class, dim, separation, rng_seed) -> Dataset:
    """Unit-variance Gaussian clusters at fixed centroids.

    Centroids sit at radius `separation` on a circle in the first two feature
    dimensions (on a line for dim == 1), so the layout is deterministic and
    the seed only drives the per-sample noise.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    centroids = np.zeros((class_count, dim))
    if dim == 1:
        centroids[:, 0] = np.arange(class_count) * separation
    else:
        angles = 2 * np.pi * np.arange(class_count) / class_count
        centroids[:, 0] = separation * np.cos(angles)
        centroids[:, 1] = separation * np.sin(angles)
    rng = np.random.default_rng(rng_seed)
    feats = rng.standard_normal((class_count * per_class, dim))
    labels = np.repeat(np.arange(class_count), per_class)
    feats += centroids[labels]
    return Dataset(feats, labels, class_count,
                   name=f"blobs{class_count}x{per_class}", provenance="synthetic")


def synth_images(class_count, per_class, size, rng_seed) -> Dataset:
    """Procedural [0, 1] RGB images: one soft class-specific bump per class.

    Each class owns a bump location on a circle and a mild color emphasis;
    per-sample location jitter plus pixel noise keep the classes overlapping
    rather than trivially separable, so trained models keep realistic margins.
    """
    if class_count < 2 or per_class < 1 or size < 4:
        raise ValueError("need class_count >= 2, per_class >= 1, size >= 4")
    rng = np.random.default_rng(rng_seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    feats = np.empty((class_count * per_class, size, size, 3))
    labels = np.repeat(np.arange(class_count), per_class)
    radius = 0.16 * size
    width = 0.16 * size
    for c in range(class_count):
        angle = 2 * np.pi * c / class_count
        cx = size / 2 + radius * np.cos(angle)
        cy = size / 2 + radius * np.sin(angle)
        color = 0.5 + 0.25 + 0.25 * np.cos(angle + 2 * np.pi * np.arange(3) / 3)
        for i in range(per_class):
            jx, jy = rng.normal(0, 0.09 * size, 2)
            bump = np.exp(-(((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2)
                            / (2 * width ** 2)))
            img = 0.15 + 0.5 * bump[..., None] * color[None, None, :]
            img += rng.normal(0, 0.08, img.shape)
            feats[c * per_class + i] = np.clip(img, 0.0, 1.0)
    return Dataset(feats, labels, class_count,
                   name=f"synthimg{class_count}x{per_class}", provenance="synthetic")


def affine_rescale(ds: Dataset, lo: float, hi: float, clip=True) -> Dataset:
    """Map features from [lo, hi] onto [0, 1] with one global affine transform."""
    if hi <= lo:
        raise ValueError("hi must exceed lo")
    feats = (ds.features - lo) / (hi - lo)
    if clip:
        feats = np.clip(feats, 0.0, 1.0)
    return Dataset(feats, ds.labels, ds.class_count,
                   name=f"{ds.name}/unit", provenance="derived")


def load_cifar10(path) -> Dataset:
    """One CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR10_RECORD_BYTES != 0:
        complete = len(raw) - len(raw) % CIFAR10_RECORD_BYTES
        raise FormatError(
            f"{path}: expected a multiple of {CIFAR10_RECORD_BYTES} bytes per record, "
            f"got {len(raw)} ({len(raw) - complete} stray bytes after offset {complete})"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: record {bad} has label {labels[bad]} outside [0, 10)")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    feats = pixels.astype(np.float64) / 255.0
    return Dataset(feats, labels, 10, name=path.stem, provenance="cifar10-binary")


def _read_idx_header(raw, path, want_magic, want_dims):
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX magic number")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != want_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{want_magic:08x}"
        )
    header = 4 + 4 * want_dims
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{want_dims}I", raw[4:header])
    return dims, header


def load_idx(path_images, path_labels) -> Dataset:
    """MNIST-style IDX pair; grayscale scaled into [0, 1], shape [N, H, W, 1]."""
    path_images, path_labels = Path(path_images), Path(path_labels)
    img_raw = path_images.read_bytes()
    lbl_raw = path_labels.read_bytes()
    (n, h, w), img_off = _read_idx_header(img_raw, path_images, IDX_IMAGES_MAGIC, 3)
    (n_lbl,), lbl_off = _read_idx_header(lbl_raw, path_labels, IDX_LABELS_MAGIC, 1)
    if n != n_lbl:
        raise FormatError(
            f"image count {n} ({path_images}) != label count {n_lbl} ({path_labels})"
        )
    expected = img_off + n * h * w
    if len(img_raw) != expected:
        raise FormatError(f"{path_images}: expected {expected} bytes, got {len(img_raw)}")
    if len(lbl_raw) != lbl_off + n:
        raise FormatError(f"{path_labels}: expected {lbl_off + n} bytes, got {len(lbl_raw)}")
    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=img_off).reshape(n, h, w, 1)
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, offset=lbl_off).astype(np.int64)
    feats = pixels.astype(np.float64) / 255.0
    return Dataset(feats, labels, int(labels.max()) + 1 if labels.max() >= 1 else 2,
                   name=path_images.stem, provenance="idx")


def to_csv(ds: Dataset, path):
    """Flat feature columns plus a label column; full float precision."""
    path = Path(path)
    flat = ds.features.reshape(len(ds), -1)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(flat.shape[1])] + ["label"])
        for row, label in zip(flat, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


def from_csv(path, class_count=None, feature_shape=None, provenance="derived") -> Dataset:
    path = Path(path)
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "label":
            raise FormatError(f"{path}: expected a feature/label CSV header")
        feats, labels = [], []
        for row in reader:
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    feats = np.asarray(feats, dtype=np.float64)
    if feature_shape is not None:
        feats = feats.reshape((len(feats),) + tuple(feature_shape))
    if class_count is None:
        class_count = int(max(labels)) + 1 if labels else 2
        class_count = max(class_count, 2)
    return Dataset(feats, labels, class_count, name=path.stem, provenance=provenance)
