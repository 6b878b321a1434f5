"""Image and volume I/O plus the preprocessing steps applied before feature
extraction: intensity normalization, Gaussian denoising and valid-region
masking.

Images are 2-D float64 arrays indexed ``[row, col]`` with intensities in
[0, 255]; masks are 2-D bool arrays of the same shape; volumes are 3-D
float64 arrays indexed ``[z, y, x]``.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy import ndimage

from .fileio import FormatError, atomic_write, expect_eof, read_exact

KVOL_MAGIC = b"KVOL"

DEFAULT_SIGMA = 0.8
DEFAULT_RADIUS = 2
DEFAULT_MASK_FRACTION = 0.05


def round_half_away(values):
    """Round to the nearest integer, halves away from zero."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


# ---------------------------------------------------------------------------
# PGM (P2 ascii / P5 binary), maxval <= 255


def _pgm_tokens(data, path):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    pos = 0
    n = len(data)
    while True:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError(f"{path}: unexpected end of PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        yield data[start:pos], pos


def load_pgm(path):
    """Load a P2 or P5 PGM file as a float64 image array.

    Raises FormatError for malformed headers, maxval > 255 or a pixel count
    that does not match the declared dimensions.
    """
    with open(path, "rb") as handle:
        data = handle.read()

    tokens = _pgm_tokens(data, path)
    magic, _ = next(tokens)
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 PGM file (magic {magic!r})")
    header = []
    end = 0
    for _ in range(3):
        token, end = next(tokens)
        try:
            header.append(int(token))
        except ValueError:
            raise FormatError(f"{path}: non-numeric PGM header token {token!r}") from None
    width, height, maxval = header
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid PGM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")

    count = width * height
    if magic == b"P5":
        body = data[end + 1 :]  # single whitespace byte after maxval
        if len(body) != count:
            raise FormatError(
                f"{path}: expected {count} pixel bytes, found {len(body)}"
            )
        values = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    else:
        fields = data[end:].split()
        if len(fields) != count:
            raise FormatError(
                f"{path}: expected {count} pixel values, found {len(fields)}"
            )
        try:
            values = np.array([int(f) for f in fields], dtype=np.float64)
        except ValueError:
            raise FormatError(f"{path}: non-numeric PGM pixel data") from None
    if values.max(initial=0) > maxval:
        raise FormatError(f"{path}: pixel value exceeds declared maxval {maxval}")
    return values.reshape(height, width)


def save_pgm(path, image):
    """Write an image (or bool mask) as a binary P5 PGM file.

    Real-valued pixels are rounded half away from zero; values outside
    [0, 255] are an error. Masks are stored with foreground = 255.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if image.dtype == bool:
        pixels = np.where(image, 255, 0).astype(np.uint8)
    else:
        image = image.astype(np.float64)
        if not np.all(np.isfinite(image)):
            raise ValueError(f"{path}: non-finite pixel values")
        if image.min() < 0 or image.max() > 255:
            raise ValueError(
                f"{path}: pixel values outside [0, 255] "
                f"(min {image.min():g}, max {image.max():g})"
            )
        pixels = round_half_away(image).astype(np.uint8)
    with atomic_write(path) as handle:
        handle.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        handle.write(pixels.tobytes())


def load_mask(path):
    """Load a PGM mask; any nonzero pixel counts as foreground."""
    return load_pgm(path) > 0


# ---------------------------------------------------------------------------
# KVOL volumes: magic "KVOL", nx/ny/nz u32 LE, then nx*ny*nz f64 LE, x-fastest


def load_volume(path):
    with open(path, "rb") as handle:
        magic = read_exact(handle, 4, path, "magic")
        if magic != KVOL_MAGIC:
            raise FormatError(f"{path}: bad KVOL magic {magic!r}")
        nx, ny, nz = struct.unpack("<III", read_exact(handle, 12, path, "dimensions"))
        if nx == 0 or ny == 0 or nz == 0:
            raise FormatError(f"{path}: zero KVOL dimension ({nx}, {ny}, {nz})")
        payload = read_exact(handle, 8 * nx * ny * nz, path, "voxel data")
        expect_eof(handle, path)
    voxels = np.frombuffer(payload, dtype="<f8")
    return voxels.reshape(nz, ny, nx).astype(np.float64)


def save_volume(path, volume):
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {volume.shape}")
    nz, ny, nx = volume.shape
    with atomic_write(path) as handle:
        handle.write(KVOL_MAGIC)
        handle.write(struct.pack("<III", nx, ny, nz))
        handle.write(np.ascontiguousarray(volume, dtype="<f8").tobytes())


# ---------------------------------------------------------------------------
# Preprocessing


def normalize_intensity(image):
    """Rescale intensities linearly so min -> 0 and max -> 255.

    Output pixels are integer-valued (rounded half away from zero).
    A constant image maps to all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("cannot normalize an empty image")
    lo = image.min()
    hi = image.max()
    if hi == lo:
        return np.zeros_like(image)
    return round_half_away((image - lo) * (255.0 / (hi - lo)))


def gaussian_kernel(sigma, radius):
    """Sampled Gaussian on [-radius, radius], normalized to sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    weights /= weights.sum()
    # nudge the center weight so the sum is exactly 1.0 in float64
    weights[radius] -= weights.sum() - 1.0
    return weights


def gaussian_filter(image, sigma=DEFAULT_SIGMA, radius=DEFAULT_RADIUS):
    """Separable Gaussian smoothing with reflected (edge-repeat) borders."""
    image = np.asarray(image, dtype=np.float64)
    weights = gaussian_kernel(sigma, radius)
    out = ndimage.convolve1d(image, weights, axis=0, mode="reflect")
    return ndimage.convolve1d(out, weights, axis=1, mode="reflect")


def largest_component(mask):
    """Keep only the largest 4-connected foreground component."""
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels, count = ndimage.label(mask, structure=structure)
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def binary_closing3(mask):
    """One pass of 3x3 morphological closing (dilate then erode).

    The erosion treats pixels outside the image as foreground so objects
    touching the border are not eaten away.
    """
    footprint = np.ones((3, 3), dtype=bool)
    dilated = ndimage.binary_dilation(mask, structure=footprint, border_value=0)
    return ndimage.binary_erosion(dilated, structure=footprint, border_value=1)


def compute_brain_mask(image, threshold_fraction=DEFAULT_MASK_FRACTION):
    """Valid-region mask: threshold, largest 4-connected component, 3x3 closing.

    ``threshold_fraction`` is relative to the full intensity range, so the
    image should be normalized first. Raises ValueError when nothing is
    above the threshold.
    """
    image = np.asarray(image, dtype=np.float64)
    foreground = image >= threshold_fraction * 255.0
    if not foreground.any():
        raise ValueError(
            f"empty foreground: no pixel reaches threshold "
            f"{threshold_fraction:g} * 255"
        )
    return binary_closing3(largest_component(foreground))
