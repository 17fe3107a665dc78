"""Dataset ingestion: bit-exact IDX parsing (MNIST-style files), bilinear
resizing onto the model grid, and a deterministic synthetic glyph corpus for
self-contained runs."""

from __future__ import annotations

import struct

import numpy as np

from .training import Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into a uint8 (count, rows, cols) array."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated header ({len(header)} of 16 bytes)")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(
                f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGES_MAGIC:08x})"
            )
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    expected = count * rows * cols
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} pixels, found {data.size}")
    return data.reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into a uint8 (count,) array."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated header ({len(header)} of 8 bytes)")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(
                f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_LABELS_MAGIC:08x})"
            )
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != count:
        raise ValueError(f"{path}: expected {count} labels, found {data.size}")
    return data.copy()


def save_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def bilinear_resize(image: np.ndarray, out_size: int) -> np.ndarray:
    """Resize a square image with bilinear interpolation."""
    image = np.asarray(image, dtype=np.float64)
    n = image.shape[0]
    if n == out_size:
        return image.copy()
    scale = n / out_size
    coords = (np.arange(out_size) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0, n - 1)
    i0 = np.floor(coords).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = coords - i0
    rows = image[i0][:, i0] * np.outer(1 - frac, 1 - frac)
    rows += image[i0][:, i1] * np.outer(1 - frac, frac)
    rows += image[i1][:, i0] * np.outer(frac, 1 - frac)
    rows += image[i1][:, i1] * np.outer(frac, frac)
    return rows


def center_embed_image(image: np.ndarray, n: int) -> np.ndarray:
    """Place an image at the center of an n x n zero canvas."""
    image = np.asarray(image, dtype=np.float64)
    m = image.shape[0]
    if m > n:
        raise ValueError(f"image of size {m} does not fit an {n}-pixel grid")
    out = np.zeros((n, n))
    start = n // 2 - m // 2
    out[start : start + m, start : start + m] = image
    return out


def _prepare_images(
    raw: np.ndarray, grid_n: int | None, resize: int | None, normalize: str
) -> np.ndarray:
    images = raw.astype(np.float64) / 255.0
    if resize is not None:
        images = np.stack([bilinear_resize(im, resize) for im in images])
    if grid_n is not None and images.shape[1] != grid_n:
        images = np.stack([center_embed_image(im, grid_n) for im in images])
    if normalize == "power":
        total = images.sum(axis=(1, 2), keepdims=True)
        images = images / np.maximum(total, 1e-12)
    elif normalize != "peak":
        raise ValueError(f"unknown normalization {normalize!r}")
    return images


def load_idx_dataset(
    images_path,
    labels_path,
    *,
    grid_n: int | None = None,
    resize: int | None = None,
    normalize: str = "peak",
    limit: int | None = None,
    offset: int = 0,
) -> Dataset:
    """Load an IDX image/label pair, scale to [0, 1], optionally embed on the grid.

    resize rescales each image bilinearly before center-embedding; normalize
    is "peak" (values in [0, 1]) or "power" (unit total per image).
    """
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels"
        )
    if offset or limit is not None:
        stop = None if limit is None else offset + limit
        images = images[offset:stop]
        labels = labels[offset:stop]
    return Dataset(_prepare_images(images, grid_n, resize, normalize), labels.astype(np.int64))


# -- synthetic corpus ---------------------------------------------------------

_GLYPH_CANVAS = 24


def _glyph_template(cls: int) -> np.ndarray:
    """Fixed geometric prototype per class on a small canvas."""
    c = _GLYPH_CANVAS
    y, x = np.mgrid[0:c, 0:c] - (c - 1) / 2.0
    r = np.sqrt(x * x + y * y)
    t = np.zeros((c, c))
    if cls == 0:
        t[(r > 6) & (r < 9)] = 1.0
    elif cls == 1:
        t[:, c // 2 - 2 : c // 2 + 2] = 1.0
    elif cls == 2:
        t[c // 2 - 2 : c // 2 + 2, :] = 1.0
    elif cls == 3:
        t[:, c // 2 - 2 : c // 2 + 2] = 1.0
        t[c // 2 - 2 : c // 2 + 2, :] = 1.0
    elif cls == 4:
        t[np.abs(x - y) < 2.5] = 1.0
        t[np.abs(x + y) < 2.5] = 1.0
    elif cls == 5:
        t[r < 5.5] = 1.0
    elif cls == 6:
        edge = np.maximum(np.abs(x), np.abs(y))
        t[(edge > 6.5) & (edge < 9.5)] = 1.0
    elif cls == 7:
        t[np.abs(x - y) < 2.5] = 1.0
    elif cls == 8:
        t[4:8, :] = 1.0
        t[c - 8 : c - 4, :] = 1.0
    elif cls == 9:
        t[(x > 1) & (y > 1)] = 1.0
    else:
        raise ValueError(f"no template for class {cls}")
    return t


def synthetic_glyphs(
    count: int, n: int, seed: int, classes: int = 10, normalize: str = "peak"
) -> Dataset:
    """Deterministic 10-class corpus of jittered geometric glyphs.

    Each sample shifts its class template by up to 3 pixels, applies mild
    multiplicative noise, and lands centered on an n x n grid.
    """
    if not 2 <= classes <= 10:
        raise ValueError("between 2 and 10 classes supported")
    rng = np.random.default_rng(seed)
    templates = [_glyph_template(k) for k in range(classes)]
    labels = rng.integers(0, classes, size=count)
    images = np.zeros((count, _GLYPH_CANVAS, _GLYPH_CANVAS))
    for i, cls in enumerate(labels):
        shifted = np.roll(
            templates[cls], (rng.integers(-3, 4), rng.integers(-3, 4)), axis=(0, 1)
        )
        noise = 1.0 + 0.15 * rng.standard_normal(shifted.shape)
        images[i] = np.clip(shifted * noise, 0.0, 1.5) / 1.5
    raw = np.round(images * 255).astype(np.uint8)
    shrink = n if n < _GLYPH_CANVAS else None
    prepared = _prepare_images(raw, n, shrink, normalize)
    return Dataset(prepared, labels.astype(np.int64))
