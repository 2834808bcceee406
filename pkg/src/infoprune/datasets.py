"""Deterministic desk-scale datasets, splits, probe batches and the raw binary image format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError


@dataclass
class LabeledImageSet:
    images: np.ndarray  # N x c x h x w, float64
    labels: np.ndarray  # N, int64
    class_count: int
    split_tag: str = "all"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise InputError(f"images {self.images.shape} and labels {self.labels.shape} do not match")
        if len(self.labels) == 0:
            raise InputError("empty image set")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise InputError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, idx, tag=None) -> "LabeledImageSet":
        idx = np.asarray(idx)
        return LabeledImageSet(self.images[idx], self.labels[idx], self.class_count, tag or self.split_tag)


def _templates(rng, num_classes, channels, size, bumps=3):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    out = np.zeros((num_classes, channels, size, size))
    for k in range(num_classes):
        for _ in range(bumps):
            cy, cx = rng.uniform(0, size, 2)
            width = rng.uniform(0.1, 0.25) * size
            color = rng.uniform(-1, 1, channels)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
            out[k] += color[:, None, None] * blob
        out[k] /= np.abs(out[k]).max()
    return out


def synth_blobs(num_classes=10, n_per_class=200, image_size=16, noise_sigma=0.5, seed=0,
                channels=3, max_shift=0) -> LabeledImageSet:
    """Class templates built from a few coloured Gaussian bumps, plus i.i.d. Gaussian pixel noise.

    ``max_shift`` > 0 circularly translates each sample's template by up to
    that many pixels along each spatial axis.
    """
    if num_classes < 2:
        raise InputError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    templates = _templates(rng, num_classes, channels, image_size)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    rng.shuffle(labels)
    images = templates[labels].copy()
    if max_shift:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(len(labels), 2))
        for n, (dy, dx) in enumerate(shifts):
            images[n] = np.roll(images[n], (dy, dx), axis=(1, 2))
    images += noise_sigma * rng.standard_normal(images.shape)
    ds = LabeledImageSet(images, labels, num_classes, "all")
    ds.templates = templates
    return ds


def train_val_split(ds: LabeledImageSet, val_fraction=0.2, seed=0):
    """Stratified split; every class keeps at least one training image."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for k in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        n_val = min(int(round(val_fraction * idx.size)), idx.size - 1)
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return ds.subset(np.sort(train), "train"), ds.subset(np.sort(val), "val")


def _interleaved_order(labels, rng) -> np.ndarray:
    """Random order dealing one image per class per round in a fixed random class order.

    Any run of consecutive entries then holds every class within one image of
    the others, while the classes last.
    """
    classes = rng.permutation(np.unique(labels))
    pools = [rng.permutation(np.flatnonzero(labels == k)) for k in classes]
    order = []
    for r in range(max(len(p) for p in pools)):
        order.extend(p[r] for p in pools if r < len(p))
    return np.asarray(order, dtype=np.int64)


def sample_probe_batches(ds: LabeledImageSet, batch_size=64, num_batches=8, seed=0, stratified=False) -> list:
    """Pairwise-disjoint random batches drawn without replacement.

    With ``stratified`` each batch holds floor or ceil of ``batch_size / K``
    images of every class (while the classes last), which removes the
    class-mix component of batch-to-batch variation.
    """
    if batch_size < 1 or num_batches < 1:
        raise InputError("batch_size and num_batches must be >= 1")
    if batch_size * num_batches > len(ds):
        raise InputError(f"need {batch_size * num_batches} images, set has {len(ds)}")
    rng = np.random.default_rng(seed)
    perm = _interleaved_order(ds.labels, rng) if stratified else rng.permutation(len(ds))
    return [ds.subset(perm[b * batch_size:(b + 1) * batch_size], f"probe{b}") for b in range(num_batches)]


def concat(sets) -> LabeledImageSet:
    sets = list(sets)
    return LabeledImageSet(np.concatenate([s.images for s in sets]), np.concatenate([s.labels for s in sets]),
                           sets[0].class_count, sets[0].split_tag)


# --------------------------------------------------------------------------
# raw binary format
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<5i")


def write_raw(ds: LabeledImageSet, path) -> Path:
    """Header ``(N, c, h, w, class_count)`` as int32, float32 pixels, int32 labels; little-endian."""
    path = Path(path)
    n, c, h, w = ds.images.shape
    with path.open("wb") as f:
        f.write(_HEADER.pack(n, c, h, w, ds.class_count))
        f.write(ds.images.astype("<f4").tobytes())
        f.write(ds.labels.astype("<i4").tobytes())
    return path


def read_raw(path, split_tag="all") -> LabeledImageSet:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("raw image file truncated: missing header")
    n, c, h, w, k = _HEADER.unpack_from(raw)
    if min(n, c, h, w, k) <= 0:
        raise FormatError(f"invalid header {(n, c, h, w, k)}")
    n_pix = n * c * h * w
    expected = _HEADER.size + 4 * n_pix + 4 * n
    if len(raw) != expected:
        raise FormatError(f"raw image file has {len(raw)} bytes, header implies {expected}")
    images = np.frombuffer(raw, "<f4", n_pix, _HEADER.size).reshape(n, c, h, w)
    labels = np.frombuffer(raw, "<i4", n, _HEADER.size + 4 * n_pix)
    try:
        return LabeledImageSet(images.astype(np.float64), labels.astype(np.int64), k, split_tag)
    except InputError as exc:
        raise FormatError(str(exc)) from exc
