"""Datasets: synthetic generator, PGM/CSV manifest I/O and image augmentations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "validation", "test")


@dataclass
class Dataset:
    images: np.ndarray  # (n, side, side) float32 in [0, 1]
    labels: np.ndarray  # (n,) ints in {1, 2}
    ids: list[str]
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise ValueError("images must have shape (n, side, side)")
        if len(self.images) != len(self.labels) or len(self.ids) != len(self.labels):
            raise ValueError("images, labels and ids must have equal length")
        if not np.all(np.isin(self.labels, (1, 2))):
            raise ValueError("labels must be 1 or 2")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 1)), int(np.sum(self.labels == 2))

    def require_both_classes(self) -> None:
        n_pos, n_neg = self.class_counts()
        if n_pos == 0 or n_neg == 0:
            raise ValueError(f"{self.split} split needs both classes (got {n_pos}/{n_neg})")

    def subset(self, index, split: str | None = None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.images[index],
            self.labels[index],
            [self.ids[i] for i in index],
            split or self.split,
        )


def stratified_split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of each class; returns (rest, held_out)."""
    rng = np.random.default_rng(seed)
    held = []
    for label in (1, 2):
        idx = np.flatnonzero(dataset.labels == label)
        k = max(1, int(round(fraction * idx.size)))
        held.extend(rng.choice(idx, size=k, replace=False))
    held = np.sort(np.asarray(held))
    rest = np.setdiff1d(np.arange(len(dataset)), held)
    return dataset.subset(rest, "train"), dataset.subset(held, "validation")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 50
    imbalance_ratio: int = 3
    noise_sigma: float = 0.05
    side: int = 28


def _radius_grid(side, cx, cy):
    yy, xx = np.mgrid[0:side, 0:side]
    return np.hypot(xx - cx, yy - cy)


def synth_generate(spec: SynthSpec, seed: int, split: str = "train", prefix: str = "") -> Dataset:
    """Blob-versus-ring images.

    Class 1 (positive) is a centred Gaussian blob, class 2 (negative) a ring.
    ``n_per_class * imbalance_ratio`` positives and ``n_per_class`` negatives
    are drawn, then shuffled.  Geometry is given for side 28 and scaled.
    """
    if spec.n_per_class < 1 or spec.imbalance_ratio < 1 or spec.side < 4:
        raise ValueError("n_per_class, imbalance_ratio must be >= 1 and side >= 4")
    rng = np.random.default_rng(seed)
    n_pos = spec.n_per_class * spec.imbalance_ratio
    n_neg = spec.n_per_class
    labels = np.array([1] * n_pos + [2] * n_neg)
    rng.shuffle(labels)
    s = spec.side / 28.0
    c = (spec.side - 1) / 2.0
    images = np.empty((labels.size, spec.side, spec.side))
    for i, label in enumerate(labels):
        cx, cy = c + rng.uniform(-3, 3, size=2) * s
        r = _radius_grid(spec.side, cx, cy)
        if label == 1:
            width = rng.uniform(2.0, 5.0) * s
            img = np.exp(-(r ** 2) / (2 * width ** 2))
        else:
            radius = rng.uniform(4.0, 8.0) * s
            width = rng.uniform(1.5, 3.0) * s
            img = np.exp(-((r - radius) ** 2) / (2 * width ** 2))
        img = img * rng.uniform(0.3, 1.0)
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    ids = [f"{prefix}{split}-{i:05d}" for i in range(labels.size)]
    return Dataset(images, labels, ids, split)


def inject_label_noise(dataset: Dataset, rate: float, seed: int) -> Dataset:
    """Flip the labels of a random ``rate`` fraction of samples."""
    rng = np.random.default_rng(seed)
    k = int(round(rate * len(dataset)))
    flip = rng.choice(len(dataset), size=k, replace=False)
    labels = dataset.labels.copy()
    labels[flip] = 3 - labels[flip]
    return Dataset(dataset.images, labels, list(dataset.ids), dataset.split)


# ---------------------------------------------------------------------------
# augmentation

AUG_OPS = ("flip-h", "shift", "gauss-noise")


def augment(image: np.ndarray, op: str, rng: np.random.Generator | None = None, **kw) -> np.ndarray:
    """Apply one augmentation op; output has the input shape and lies in [0, 1].

    ``flip-h`` mirrors left-right, ``shift`` rolls by ``dx``/``dy`` pixels
    (circular), ``gauss-noise`` adds N(0, sigma^2) pixel noise drawn from ``rng``.
    """
    image = np.asarray(image)
    if op == "flip-h":
        return image[:, ::-1].copy()
    if op == "shift":
        dx, dy = int(kw.get("dx", 0)), int(kw.get("dy", 0))
        if dx == 0 and dy == 0:
            return image
        return np.roll(image, (dy, dx), axis=(0, 1))
    if op == "gauss-noise":
        sigma = float(kw.get("sigma", 0.02))
        if sigma == 0:
            return image
        if rng is None:
            raise ValueError("gauss-noise needs an rng")
        noisy = image + rng.normal(0.0, sigma, size=image.shape)
        return np.clip(noisy, 0.0, 1.0).astype(image.dtype)
    raise ValueError(f"unknown augmentation op {op!r}; expected one of {AUG_OPS}")


@dataclass(frozen=True)
class AugConfig:
    """Random composition used for test-time augmentation."""

    flip_prob: float = 0.5
    max_shift: int = 2
    noise_sigma: float = 0.02
    ops: tuple[str, ...] = field(default=AUG_OPS)

    def __post_init__(self):
        unknown = set(self.ops) - set(AUG_OPS)
        if unknown:
            raise ValueError(f"unknown augmentation ops {sorted(unknown)}")


def random_augment(image: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    out = image
    # draws are made for every op so that disabling one op leaves the others' streams unchanged
    flip = rng.random() < cfg.flip_prob
    dx, dy = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=2)
    if "flip-h" in cfg.ops and flip:
        out = augment(out, "flip-h")
    if "shift" in cfg.ops:
        out = augment(out, "shift", dx=dx, dy=dy)
    if "gauss-noise" in cfg.ops:
        out = augment(out, "gauss-noise", rng, sigma=cfg.noise_sigma)
    return out


# ---------------------------------------------------------------------------
# PGM + manifest I/O


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale image as 8-bit binary PGM (P5)."""
    image = np.asarray(image)
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) and scale pixels to [0, 1]."""
    buf = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported PGM geometry or maxval {maxval}")
    raster = buf[offset:offset + w * h]
    if len(raster) != w * h:
        raise ValueError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float32) / 255.0


def resize_nearest(image: np.ndarray, side: int) -> np.ndarray:
    h, w = image.shape
    if (h, w) == (side, side):
        return image
    rows = np.minimum((np.arange(side) + 0.5) * h / side, h - 1).astype(int)
    cols = np.minimum((np.arange(side) + 0.5) * w / side, w - 1).astype(int)
    return image[np.ix_(rows, cols)]


def load_manifest(manifest_path, side: int, split: str = "train") -> Dataset:
    """Load a ``path,label`` CSV manifest; image paths are relative to the manifest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    images, labels, ids = [], [], []
    seen = set()
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{manifest_path}: header must contain path,label")
        for row_no, row in enumerate(reader, start=2):
            rel = row["path"].strip()
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                label = None
            if label not in (1, 2):
                raise ValueError(f"{manifest_path}:{row_no}: label {row['label']!r} not in {{1, 2}}")
            if rel in seen:
                raise ValueError(f"{manifest_path}:{row_no}: duplicate id {rel!r}")
            path = root / rel
            if not path.is_file():
                raise FileNotFoundError(f"{manifest_path}:{row_no}: missing image {path}")
            images.append(resize_nearest(read_pgm(path), side))
            labels.append(label)
            ids.append(rel)
            seen.add(rel)
    if not ids:
        raise ValueError(f"{manifest_path}: no samples")
    return Dataset(np.stack(images), labels, ids, split)


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write images as PGM files plus ``manifest.csv``; returns the manifest path."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for sid, image, label in zip(dataset.ids, dataset.images, dataset.labels):
            rel = f"images/{sid}.pgm"
            write_pgm(directory / rel, image)
            writer.writerow([rel, int(label)])
    return manifest
