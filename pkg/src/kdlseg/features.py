"""22-dimensional texture descriptors computed from 3x3 pixel neighborhoods.

Component order of a feature vector:

    [mean, variance, skewness, kurtosis, center value, range,
     then for each angle in (0, 45, 90, 135) degrees:
         homogeneity, contrast, energy, entropy]

First-order statistics are population moments over the nine pixels;
second-order statistics come from symmetric distance-1 gray-level
co-occurrence matrices quantized to ``levels`` bins over [0, 256).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fileio import FormatError, atomic_write, expect_eof, read_exact

FEATURE_LENGTH = 22
ANGLES = (0, 45, 90, 135)
DEFAULT_LEVELS = 8

LABEL_NORMAL = 0
LABEL_TUMOR = 1
LABEL_UNKNOWN = 255

KDF_MAGIC = b"KDF1"

# in-patch (row, col) index pairs for each co-occurrence offset, flat 0..8
_PAIRS = {
    0: ((0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8)),  # (0, +1)
    45: ((3, 1), (4, 2), (6, 4), (7, 5)),  # (-1, +1)
    90: ((3, 0), (4, 1), (5, 2), (6, 3), (7, 4), (8, 5)),  # (-1, 0)
    135: ((4, 0), (5, 1), (7, 3), (8, 4)),  # (-1, -1)
}


@dataclass
class FeatureSet:
    """A batch of feature vectors with class labels and pixel provenance.

    vectors: (count, 22) float64; labels: (count,) uint8 using the LABEL_*
    constants; coords: (count, 2) int32 of (x, y) pixel centers, or None
    when the vectors did not come from an image.
    """

    vectors: np.ndarray
    labels: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if len(self.labels) != len(self.vectors):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.vectors)} vectors"
            )

    def __len__(self):
        return len(self.vectors)

    @property
    def dimension(self):
        return self.vectors.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices)
        coords = self.coords[indices] if self.coords is not None else None
        return FeatureSet(self.vectors[indices], self.labels[indices], coords)


@dataclass
class FeatureScaler:
    """Per-dimension z-score statistics (population std; zero-variance -> 1)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)

    @classmethod
    def identity(cls, dimension):
        return cls(np.zeros(dimension), np.ones(dimension))

    def transform(self, vectors):
        return (np.asarray(vectors, dtype=np.float64) - self.mean) / self.std

    def inverse(self, vectors):
        return np.asarray(vectors, dtype=np.float64) * self.std + self.mean

    def equals(self, other):
        return np.array_equal(self.mean, other.mean) and np.array_equal(
            self.std, other.std
        )


def first_order_stats(patch):
    """Population (mean, variance, skewness, kurtosis) of the nine values.

    Skewness is m3 / m2**1.5 and kurtosis m4 / m2**2 (non-excess); both are
    defined as 0 for a zero-variance patch.
    """
    values = _as_patch(patch)
    mean = values.mean()
    deltas = values - mean
    m2 = (deltas**2).mean()
    if m2 == 0.0:
        return mean, 0.0, 0.0, 0.0
    skewness = (deltas**3).mean() / m2**1.5
    kurtosis = (deltas**4).mean() / m2**2
    return mean, m2, skewness, kurtosis


def center_and_range(patch):
    """Center pixel value and max - min over the patch."""
    values = _as_patch(patch)
    return values[4], values.max() - values.min()


def quantize(values, levels=DEFAULT_LEVELS):
    """Map intensities in [0, 255] to integer bins 0 .. levels-1."""
    q = np.floor(np.asarray(values, dtype=np.float64) * levels / 256.0)
    return np.clip(q, 0, levels - 1).astype(np.intp)


def glcm(patch, angle, levels=DEFAULT_LEVELS):
    """Symmetric normalized co-occurrence matrix of a 3x3 patch at one angle."""
    if angle not in _PAIRS:
        raise ValueError(f"angle must be one of {ANGLES}, got {angle}")
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    q = quantize(_as_patch(patch), levels)
    matrix = np.zeros((levels, levels), dtype=np.float64)
    for a, b in _PAIRS[angle]:
        matrix[q[a], q[b]] += 1.0
        matrix[q[b], q[a]] += 1.0
    return matrix / matrix.sum()


def glcm_features(matrix):
    """(homogeneity, contrast, energy, entropy) of a normalized GLCM."""
    matrix = np.asarray(matrix, dtype=np.float64)
    levels = matrix.shape[0]
    i, j = np.meshgrid(np.arange(levels), np.arange(levels), indexing="ij")
    diff = np.abs(i - j)
    homogeneity = (matrix / (1.0 + diff)).sum()
    contrast = (matrix * diff**2).sum()
    energy = (matrix**2).sum()
    positive = matrix[matrix > 0]
    entropy = -(positive * np.log2(positive)).sum()
    return homogeneity, contrast, energy, entropy


def feature_vector(image, mask, x, y, levels=DEFAULT_LEVELS):
    """The 22-component descriptor of the pixel at (x, y).

    The full 3x3 neighborhood must lie inside the image and the valid mask.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} vs mask {mask.shape}")
    height, width = image.shape
    if not (1 <= x <= width - 2 and 1 <= y <= height - 2):
        raise ValueError(f"3x3 neighborhood of ({x}, {y}) leaves the image")
    if not mask[y - 1 : y + 2, x - 1 : x + 2].all():
        raise ValueError(f"3x3 neighborhood of ({x}, {y}) leaves the valid mask")
    patch = image[y - 1 : y + 2, x - 1 : x + 2].ravel()

    components = np.empty(FEATURE_LENGTH)
    components[0:4] = first_order_stats(patch)
    components[4:6] = center_and_range(patch)
    for a, angle in enumerate(ANGLES):
        components[6 + 4 * a : 10 + 4 * a] = glcm_features(glcm(patch, angle, levels))
    return components


def extract_features(image, mask, label_mask=None, levels=DEFAULT_LEVELS):
    """Descriptors for every pixel whose full 3x3 neighborhood is valid.

    Pixels are visited in row-major order. Labels are copied from
    ``label_mask`` (nonzero = tumor) when given, else marked unknown.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} vs mask {mask.shape}")
    if label_mask is not None:
        label_mask = np.asarray(label_mask)
        if label_mask.shape != image.shape:
            raise ValueError(f"image {image.shape} vs labels {label_mask.shape}")

    height, width = image.shape
    if height < 3 or width < 3 or not mask.any():
        return _empty_set()

    windows = sliding_window_view(image, (3, 3))
    valid = sliding_window_view(mask, (3, 3)).all(axis=(2, 3))
    rows, cols = np.nonzero(valid)
    if len(rows) == 0:
        return _empty_set()
    patches = windows[rows, cols].reshape(-1, 9)
    xs = cols + 1
    ys = rows + 1

    if label_mask is None:
        labels = np.full(len(rows), LABEL_UNKNOWN, dtype=np.uint8)
    else:
        labels = np.where(label_mask[ys, xs] != 0, LABEL_TUMOR, LABEL_NORMAL)
        labels = labels.astype(np.uint8)
    coords = np.stack([xs, ys], axis=1).astype(np.int32)
    return FeatureSet(_features_from_patches(patches, levels), labels, coords)


def _empty_set():
    return FeatureSet(
        np.empty((0, FEATURE_LENGTH)),
        np.empty(0, dtype=np.uint8),
        np.empty((0, 2), dtype=np.int32),
    )


def _as_patch(patch):
    values = np.asarray(patch, dtype=np.float64).ravel()
    if values.size != 9:
        raise ValueError(f"patch must hold 9 values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("patch contains non-finite values")
    return values


def _features_from_patches(patches, levels):
    """Vectorized form of feature_vector over (count, 9) patches."""
    count = len(patches)
    out = np.empty((count, FEATURE_LENGTH))

    mean = patches.mean(axis=1)
    deltas = patches - mean[:, None]
    m2 = (deltas**2).mean(axis=1)
    nonzero = m2 > 0.0
    safe_m2 = np.where(nonzero, m2, 1.0)
    out[:, 0] = mean
    out[:, 1] = m2
    out[:, 2] = np.where(nonzero, (deltas**3).mean(axis=1) / safe_m2**1.5, 0.0)
    out[:, 3] = np.where(nonzero, (deltas**4).mean(axis=1) / safe_m2**2, 0.0)
    out[:, 4] = patches[:, 4]
    out[:, 5] = patches.max(axis=1) - patches.min(axis=1)

    q = quantize(patches, levels)
    cells = levels * levels
    i, j = np.meshgrid(np.arange(levels), np.arange(levels), indexing="ij")
    diff = np.abs(i - j).ravel().astype(np.float64)
    inv_dist = 1.0 / (1.0 + diff)
    sq_diff = diff**2
    row_offset = np.arange(count) * cells

    for a, angle in enumerate(ANGLES):
        pairs = np.array(_PAIRS[angle])
        qa = q[:, pairs[:, 0]]
        qb = q[:, pairs[:, 1]]
        codes = np.concatenate([qa * levels + qb, qb * levels + qa], axis=1)
        counts = np.bincount(
            (codes + row_offset[:, None]).ravel(), minlength=count * cells
        )
        matrix = counts.reshape(count, cells).astype(np.float64)
        matrix /= 2 * len(pairs)

        base = 6 + 4 * a
        out[:, base] = matrix @ inv_dist
        out[:, base + 1] = matrix @ sq_diff
        out[:, base + 2] = (matrix**2).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_terms = np.where(matrix > 0, matrix * np.log2(matrix), 0.0)
        out[:, base + 3] = -log_terms.sum(axis=1)
    return out


def fit_scaler(features):
    """Per-dimension mean/std over a feature set (or raw (count, L) array)."""
    vectors = features.vectors if isinstance(features, FeatureSet) else features
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        raise ValueError("cannot fit a scaler on an empty feature set")
    mean = vectors.mean(axis=0)
    std = vectors.std(axis=0)
    std[std == 0.0] = 1.0
    return FeatureScaler(mean, std)


def apply_scaler(features, scaler):
    """Return a new FeatureSet with z-scored vectors."""
    return FeatureSet(
        scaler.transform(features.vectors), features.labels, features.coords
    )


# ---------------------------------------------------------------------------
# KDF1 feature files: magic, L u32 LE, count u64 LE, labels (count bytes),
# then L*count f64 LE values, vector-major.


def save_features(path, features):
    vectors = np.ascontiguousarray(features.vectors, dtype="<f8")
    count, dim = vectors.shape
    with atomic_write(path) as handle:
        handle.write(KDF_MAGIC)
        handle.write(struct.pack("<IQ", dim, count))
        handle.write(features.labels.tobytes())
        handle.write(vectors.tobytes())


def load_features(path):
    with open(path, "rb") as handle:
        magic = read_exact(handle, 4, path, "magic")
        if magic != KDF_MAGIC:
            raise FormatError(f"{path}: bad KDF1 magic {magic!r}")
        dim, count = struct.unpack("<IQ", read_exact(handle, 12, path, "header"))
        labels = np.frombuffer(
            read_exact(handle, count, path, "labels"), dtype=np.uint8
        ).copy()
        payload = read_exact(handle, 8 * dim * count, path, "vectors")
        expect_eof(handle, path)
    bad = ~np.isin(labels, (LABEL_NORMAL, LABEL_TUMOR, LABEL_UNKNOWN))
    if bad.any():
        raise FormatError(f"{path}: invalid label byte {labels[bad][0]}")
    vectors = np.frombuffer(payload, dtype="<f8").reshape(count, dim)
    return FeatureSet(vectors.astype(np.float64), labels)
