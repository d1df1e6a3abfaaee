"""Synthetic attribute-driven image data, on-disk formats, and splits.

The generator gives every attribute a fixed square patch location and a
base color; an image of class y is the sum of its member-attribute patches
scaled by the class's attribute strengths, plus Gaussian pixel noise.
Attribute membership is drawn with block structure (groups of attributes
shared across classes) so co-occurrence statistics, and therefore the
knowledge graph and word embeddings, are non-trivial.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SplitError, ValidationError
from .graph import CategoryAttributeMatrix, binarize_attributes, read_attribute_csv, write_attribute_csv

IMAGE_MAGIC = b"GVSE"
IMAGE_VERSION = 1


@dataclass
class SplitSpec:
    seen: list[int]
    unseen: list[int]


def validate_split(split: SplitSpec, num_classes: int) -> None:
    """Seen and unseen must be disjoint and together cover all classes."""
    seen, unseen = set(split.seen), set(split.unseen)
    overlap = sorted(seen & unseen)
    if overlap:
        raise SplitError(f"classes in both seen and unseen: {overlap}")
    gap = sorted(set(range(num_classes)) - seen - unseen)
    if gap:
        raise SplitError(f"classes in neither seen nor unseen: {gap}")
    extra = sorted((seen | unseen) - set(range(num_classes)))
    if extra:
        raise SplitError(f"split references unknown classes: {extra}")


@dataclass
class Dataset:
    images: np.ndarray  # N x 3 x H x W
    labels: np.ndarray  # N
    cam: CategoryAttributeMatrix
    split: SplitSpec
    binarize_mode: str = "nonzero"
    word_table: object = None  # attached by the trainer when needed

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValidationError("images must be N x C x H x W matching labels")
        ny = self.cam.num_categories
        bad = np.where(self.labels >= ny)[0]
        if bad.size:
            raise ValidationError(f"label out of range at sample index {int(bad[0])}")
        validate_split(self.split, ny)
        for y in self.split.seen:
            if (self.labels == y).sum() < 2:
                raise ValidationError(f"seen class {y} has fewer than 2 samples")
        self.membership = binarize_attributes(self.cam, self.binarize_mode)

    @property
    def num_classes(self) -> int:
        return self.cam.num_categories


@dataclass
class SyntheticSpec:
    num_classes: int = 12
    num_seen: int = 8
    num_attributes: int = 20
    hw: int = 32
    samples_per_class: int = 40
    sigma: float = 0.1
    pattern_seed: int = 0
    pattern: str = "blocks"  # or "one-hot": attribute j == class j

    def __post_init__(self):
        if self.num_attributes > self.hw * self.hw // 4:
            raise ConfigError(f"m={self.num_attributes} exceeds {self.hw}x{self.hw}/4 patch slots")
        if not 0 < self.num_seen < self.num_classes:
            raise ConfigError("need at least one seen and one unseen class")
        if self.pattern == "one-hot" and self.num_attributes < self.num_classes:
            raise ConfigError("one-hot pattern needs m >= |Y|")


def _attribute_layout(spec: SyntheticSpec, rng: np.random.Generator):
    """Patch slot and base color per attribute, patches as large as m allows."""
    side = 2
    for cand in range(spec.hw // 2, 1, -1):
        if (spec.hw // cand) ** 2 >= spec.num_attributes:
            side = cand
            break
    per_row = spec.hw // side
    slots = rng.choice(per_row * per_row, size=spec.num_attributes, replace=False)
    colors = rng.uniform(0.25, 1.0, size=(spec.num_attributes, 3))
    boxes = []
    for slot in slots:
        r, c = (slot // per_row) * side, (slot % per_row) * side
        boxes.append((r, r + side, c, c + side))
    return boxes, colors


def _attribute_pattern(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Class-attribute strength matrix with block co-occurrence structure."""
    ny, m = spec.num_classes, spec.num_attributes
    values = np.zeros((ny, m))
    if spec.pattern == "one-hot":
        for y in range(ny):
            values[y, y] = 1.0
        return values
    group_count = 4 if m >= 8 else 2
    group_size = m // group_count
    groups = [list(range(g * group_size, (g + 1) * group_size)) for g in range(group_count)]
    for y in range(ny):
        picked = rng.choice(group_count, size=rng.integers(1, 3), replace=False)
        members = [j for g in picked for j in groups[g]]
        pool = [j for j in range(m) if j not in members]
        n_single = min(int(rng.integers(0, 3)), len(pool))
        if n_single:
            members += [int(j) for j in rng.choice(pool, size=n_single, replace=False)]
        values[y, members] = rng.uniform(0.5, 1.0, size=len(members))
    # every attribute must occur somewhere, or PMI counting degenerates
    for j in np.where(values.sum(axis=0) == 0)[0]:
        values[int(rng.integers(0, ny)), j] = rng.uniform(0.5, 1.0)
    return values


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> Dataset:
    pattern_rng = np.random.default_rng(spec.pattern_seed)
    boxes, colors = _attribute_layout(spec, pattern_rng)
    values = _attribute_pattern(spec, pattern_rng)
    cam = CategoryAttributeMatrix(
        values,
        [f"class{y}" for y in range(spec.num_classes)],
        [f"att{j}" for j in range(spec.num_attributes)],
    )

    templates = np.zeros((spec.num_classes, 3, spec.hw, spec.hw))
    for y in range(spec.num_classes):
        for j in np.flatnonzero(values[y]):
            r0, r1, c0, c1 = boxes[j]
            templates[y, :, r0:r1, c0:c1] += values[y, j] * colors[j][:, None, None]

    n = spec.num_classes * spec.samples_per_class
    images = np.empty((n, 3, spec.hw, spec.hw))
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for y in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            noise = rng.normal(0.0, spec.sigma, size=templates[y].shape) if spec.sigma > 0 else 0.0
            images[i] = templates[y] + noise
            labels[i] = y
            i += 1

    split = SplitSpec(seen=list(range(spec.num_seen)), unseen=list(range(spec.num_seen, spec.num_classes)))
    return Dataset(images=images, labels=labels, cam=cam, split=split)


# ---------------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------------

def save_images(path, images: np.ndarray) -> None:
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<5I", IMAGE_VERSION, n, c, h, w))
        fh.write(np.ascontiguousarray(images, dtype="<f8").tobytes())


def load_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != IMAGE_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}")
        version, n, c, h, w = struct.unpack("<5I", fh.read(20))
        if version != IMAGE_VERSION:
            raise ValidationError(f"{path}: unsupported image file version {version}")
        buf = fh.read(n * c * h * w * 8)
        if len(buf) != n * c * h * w * 8:
            raise ValidationError(f"{path}: truncated image payload")
        return np.frombuffer(buf, dtype="<f8").reshape(n, c, h, w).copy()


def save_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())


def load_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return np.frombuffer(fh.read(), dtype="<u4").astype(np.int64)


def save_split(path, split: SplitSpec) -> None:
    with open(path, "w") as fh:
        json.dump({"seen": list(map(int, split.seen)), "unseen": list(map(int, split.unseen))}, fh, indent=2)
        fh.write("\n")


def load_split(path) -> SplitSpec:
    with open(path) as fh:
        obj = json.load(fh)
    return SplitSpec(seen=list(obj["seen"]), unseen=list(obj["unseen"]))


def save_dataset(dataset: Dataset, outdir) -> dict:
    """Writes images.bin / labels.bin / attributes.csv / split.json; returns paths."""
    import os

    paths = {
        "images": os.path.join(outdir, "images.bin"),
        "labels": os.path.join(outdir, "labels.bin"),
        "attributes": os.path.join(outdir, "attributes.csv"),
        "split": os.path.join(outdir, "split.json"),
    }
    save_images(paths["images"], dataset.images)
    save_labels(paths["labels"], dataset.labels)
    write_attribute_csv(paths["attributes"], dataset.cam)
    save_split(paths["split"], dataset.split)
    return paths


def load_dataset(images_path, labels_path, attributes_path, split_path,
                 binarize_mode: str = "nonzero") -> Dataset:
    return Dataset(
        images=load_images(images_path),
        labels=load_labels(labels_path),
        cam=read_attribute_csv(attributes_path),
        split=load_split(split_path),
        binarize_mode=binarize_mode,
    )
