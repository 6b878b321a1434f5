"""Two-dictionary pixel classification and slice / volume segmentation.

Each valid pixel's raw 22-dim descriptor is z-scored with the scaler the
dictionaries were trained with, sparse-coded against the normal and tumor
dictionaries, and labeled by comparing the feature-space RMSE of the two
reconstructions. The default rule assigns the class whose dictionary
reconstructs with *smaller* error; ``printed_rule=True`` flips the
inequality (normal when the normal error is larger). Exact ties are
tumorous under both rules.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .features import DEFAULT_LEVELS, extract_features
from .kernels import kernel_matrix, kernel_row, self_kernel
from .sparse import komp, komp_batch, reconstruction_error2

DEFAULT_PIXEL_BLOCK = 8192


@dataclass
class SegmentationResult:
    """Tumor mask plus per-pixel reconstruction errors.

    ``classified`` marks pixels that were actually coded (full 3x3 valid
    neighborhood); error maps hold NaN everywhere else.
    """

    tumor_mask: np.ndarray  # (h, w) bool
    error_normal: np.ndarray  # (h, w) float64, NaN where unclassified
    error_tumor: np.ndarray  # (h, w) float64, NaN where unclassified
    classified: np.ndarray  # (h, w) bool


def check_compatible(dict_normal, dict_tumor):
    """The two dictionaries must agree on kernel, scaler and dimension."""
    if dict_normal.kernel != dict_tumor.kernel:
        raise ValueError(
            f"kernel mismatch: {dict_normal.kernel} vs {dict_tumor.kernel}"
        )
    if dict_normal.dimension != dict_tumor.dimension:
        raise ValueError(
            f"dimension mismatch: {dict_normal.dimension} vs {dict_tumor.dimension}"
        )
    if not dict_normal.scaler.equals(dict_tumor.scaler):
        raise ValueError("scaler mismatch between dictionaries")


def _labels_from_errors(err_normal, err_tumor, printed_rule):
    if printed_rule:
        # as printed: normal iff the normal-dictionary error is larger
        return err_normal <= err_tumor
    return err_normal >= err_tumor


def classify_vector(vector, dict_normal, dict_tumor, printed_rule=False):
    """Label one raw feature vector; returns (label, err_normal, err_tumor).

    Errors are feature-space RMSEs. The label is "tumor" or "normal".
    """
    check_compatible(dict_normal, dict_tumor)
    scaled = dict_normal.scaler.transform(np.asarray(vector, dtype=np.float64))
    errors = {}
    for name, d in (("normal", dict_normal), ("tumor", dict_tumor)):
        kz = kernel_row(d.kernel, scaled, d.samples)
        kzz = self_kernel(d.kernel, scaled)[0]
        code = komp(kz, kzz, d.coefficients, d.gram(), d.t0)
        errors[name] = float(
            np.sqrt(reconstruction_error2(kz, kzz, code, d.coefficients, d.gram()))
        )
    tumor = _labels_from_errors(errors["normal"], errors["tumor"], printed_rule)
    return ("tumor" if tumor else "normal"), errors["normal"], errors["tumor"]


def _errors_for_block(scaled_block, dictionary):
    d = dictionary
    KZ = kernel_matrix(d.kernel, scaled_block, d.samples)
    kzz = self_kernel(d.kernel, scaled_block)
    codes = komp_batch(KZ, kzz, d.coefficients, d.gram(), d.t0)
    return np.sqrt(codes.error2)


def classify_batch(
    vectors, dict_normal, dict_tumor, block_size=DEFAULT_PIXEL_BLOCK, threads=1
):
    """RMSE pairs for a batch of raw feature vectors.

    Vectors are processed in fixed blocks of ``block_size``; threads only
    parallelize over those blocks, so results do not depend on the thread
    count.
    """
    check_compatible(dict_normal, dict_tumor)
    vectors = np.asarray(vectors, dtype=np.float64)
    scaled = dict_normal.scaler.transform(vectors)
    blocks = [
        scaled[start : start + block_size]
        for start in range(0, len(scaled), block_size)
    ]

    def work(block):
        return (
            _errors_for_block(block, dict_normal),
            _errors_for_block(block, dict_tumor),
        )

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(work, blocks))
    else:
        pairs = [work(block) for block in blocks]
    err_normal = np.concatenate([p[0] for p in pairs]) if pairs else np.empty(0)
    err_tumor = np.concatenate([p[1] for p in pairs]) if pairs else np.empty(0)
    return err_normal, err_tumor


def segment_slice(
    image,
    mask,
    dict_normal,
    dict_tumor,
    printed_rule=False,
    block_size=DEFAULT_PIXEL_BLOCK,
    threads=1,
    levels=DEFAULT_LEVELS,
):
    """Classify every pixel of a preprocessed slice with a valid 3x3
    neighborhood; everything else is background."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} vs mask {mask.shape}")

    shape = image.shape
    result = SegmentationResult(
        tumor_mask=np.zeros(shape, dtype=bool),
        error_normal=np.full(shape, np.nan),
        error_tumor=np.full(shape, np.nan),
        classified=np.zeros(shape, dtype=bool),
    )
    feature_set = extract_features(image, mask, levels=levels)
    if len(feature_set) == 0:
        return result

    err_normal, err_tumor = classify_batch(
        feature_set.vectors, dict_normal, dict_tumor, block_size, threads
    )
    xs = feature_set.coords[:, 0]
    ys = feature_set.coords[:, 1]
    result.classified[ys, xs] = True
    result.error_normal[ys, xs] = err_normal
    result.error_tumor[ys, xs] = err_tumor
    result.tumor_mask[ys, xs] = _labels_from_errors(err_normal, err_tumor, printed_rule)
    return result


def segment_volume(
    volume,
    mask_volume,
    models_per_axis,
    printed_rule=False,
    block_size=DEFAULT_PIXEL_BLOCK,
    threads=1,
    levels=DEFAULT_LEVELS,
):
    """Per-axis slice segmentation fused by per-voxel majority vote.

    ``models_per_axis`` holds three (normal, tumor) dictionary pairs for
    slicing along x, y and z. A voxel is tumor when at least two of the
    three axis segmentations say so.
    """
    volume = np.asarray(volume, dtype=np.float64)
    mask_volume = np.asarray(mask_volume, dtype=bool)
    if volume.ndim != 3 or volume.shape != mask_volume.shape:
        raise ValueError(
            f"volume {volume.shape} vs mask volume {mask_volume.shape}"
        )
    if len(models_per_axis) != 3:
        raise ValueError("need exactly three (normal, tumor) model pairs")

    votes = np.zeros(volume.shape, dtype=np.uint8)
    slicers = [
        lambda i: (slice(None), slice(None), i),  # x slices -> (z, y) planes
        lambda i: (slice(None), i, slice(None)),  # y slices -> (z, x) planes
        lambda i: (i, slice(None), slice(None)),  # z slices -> (y, x) planes
    ]
    for axis, (dict_normal, dict_tumor) in enumerate(models_per_axis):
        extent = volume.shape[2 - axis]
        for i in range(extent):
            index = slicers[axis](i)
            result = segment_slice(
                volume[index],
                mask_volume[index],
                dict_normal,
                dict_tumor,
                printed_rule,
                block_size,
                threads,
                levels,
            )
            votes[index] += result.tumor_mask
    return votes >= 2
