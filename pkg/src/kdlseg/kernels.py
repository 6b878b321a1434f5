"""Kernel evaluation and Gram matrices.

The RBF kernel exp(-gamma * ||x - y||^2) is the working kernel; the linear
kernel exists so the kernel algorithms can be cross-checked exactly against
their classical explicit-vector counterparts. Squared distances are always
accumulated as sum((x_i - y_i)^2), never in the expanded form, so small
distances stay accurate. Samples are rows: Y has shape (count, dimension).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GAMMA = 0.35
DEFAULT_BLOCK_SIZE = 256

RBF = "rbf"
LINEAR = "linear"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus parameters (gamma for rbf)."""

    family: str
    gamma: float | None = None

    def __post_init__(self):
        if self.family not in (RBF, LINEAR):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == RBF:
            if self.gamma is None or self.gamma <= 0:
                raise ValueError(f"rbf kernel needs gamma > 0, got {self.gamma}")


def rbf_kernel(gamma=DEFAULT_GAMMA):
    return KernelSpec(RBF, float(gamma))


def linear_kernel():
    return KernelSpec(LINEAR)


def kernel_eval(spec, x, y):
    """kappa(x, y) for a single pair of vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if spec.family == LINEAR:
        return float(x @ y)
    return float(np.exp(-spec.gamma * ((x - y) ** 2).sum()))


def self_kernel(spec, vectors):
    """kappa(z, z) for each row of ``vectors`` (exactly 1 for rbf)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if spec.family == LINEAR:
        return np.einsum("ij,ij->i", vectors, vectors)
    return np.ones(len(vectors))


def _pairwise(spec, left, right):
    if spec.family == LINEAR:
        return left @ right.T
    diff = left[:, None, :] - right[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-spec.gamma * d2)


def kernel_row(spec, z, samples):
    """Vector of kappa(z, y_j) over all sample rows y_j."""
    z = np.asarray(z, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError(f"samples must be a nonempty (count, dim) array")
    if z.ndim != 1 or z.shape[0] != samples.shape[1]:
        raise ValueError(
            f"dimension mismatch: z has {z.shape}, samples {samples.shape}"
        )
    return _pairwise(spec, z[None, :], samples)[0]


def kernel_matrix(spec, points, samples, block_size=1024):
    """kappa between every row of ``points`` and every row of ``samples``.

    Row blocks bound peak memory; blocking does not change any output bit
    because each entry's reduction runs over the feature axis only.
    """
    points = np.asarray(points, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if points.shape[1] != samples.shape[1]:
        raise ValueError(
            f"dimension mismatch: points {points.shape} vs samples {samples.shape}"
        )
    out = np.empty((len(points), len(samples)))
    for start in range(0, len(points), block_size):
        stop = start + block_size
        out[start:stop] = _pairwise(spec, points[start:stop], samples)
    return out


def gram(spec, samples, block_size=DEFAULT_BLOCK_SIZE):
    """Symmetric Gram matrix K(Y, Y), upper triangle computed once and mirrored."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise ValueError("samples must be a nonempty (count, dim) array")
    n = len(samples)
    out = np.empty((n, n))
    for i0 in range(0, n, block_size):
        i1 = min(i0 + block_size, n)
        for j0 in range(i0, n, block_size):
            j1 = min(j0 + block_size, n)
            block = _pairwise(spec, samples[i0:i1], samples[j0:j1])
            if j0 == i0:
                # mirror the upper triangle so symmetry is bitwise exact
                upper = np.triu(block)
                out[i0:i1, j0:j1] = upper + np.triu(block, 1).T
            else:
                out[i0:i1, j0:j1] = block
                out[j0:j1, i0:i1] = block.T
    return out
