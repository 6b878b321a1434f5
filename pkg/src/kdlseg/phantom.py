"""Deterministic synthetic phantoms: a textured background with an
elliptical lesion of different texture, plus geometric ground truth.

The background is a base intensity with smoothed (low-contrast) noise; the
lesion gets a brighter base and rougher, higher-amplitude noise so its 3x3
texture statistics differ by construction. The truth mask is the ellipse
membership itself, never thresholded intensities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import gaussian_filter


@dataclass
class TextureParams:
    base_intensity: float
    noise_amplitude: float
    smoothing_sigma: float

    def __post_init__(self):
        if self.noise_amplitude < 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.noise_amplitude}")
        if self.smoothing_sigma < 0:
            raise ValueError(f"smoothing sigma must be >= 0, got {self.smoothing_sigma}")


@dataclass
class PhantomSpec:
    width: int
    height: int
    background: TextureParams
    lesion: TextureParams
    center: tuple  # (cx, cy) in pixels
    semi_axes: tuple  # (rx, ry) in pixels
    seed: int

    def __post_init__(self):
        cx, cy = self.center
        rx, ry = self.semi_axes
        if rx <= 0 or ry <= 0:
            raise ValueError(f"degenerate ellipse semi-axes ({rx}, {ry})")
        if not (rx <= cx <= self.width - 1 - rx and ry <= cy <= self.height - 1 - ry):
            raise ValueError(
                f"ellipse (center {self.center}, semi-axes {self.semi_axes}) "
                f"leaves the {self.width}x{self.height} frame"
            )


def ellipse_mask(width, height, center, semi_axes):
    cx, cy = center
    rx, ry = semi_axes
    x = np.arange(width)[None, :]
    y = np.arange(height)[:, None]
    return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0


def _texture(shape, params, rng):
    noise = rng.standard_normal(shape)
    if params.smoothing_sigma > 0:
        radius = max(1, int(np.ceil(3 * params.smoothing_sigma)))
        noise = gaussian_filter(noise, params.smoothing_sigma, radius)
    return params.base_intensity + params.noise_amplitude * noise


def generate_phantom(spec):
    """Return (image, valid mask, truth mask), fully determined by the seed.

    The valid mask is the full frame minus a 1-pixel border; intensities are
    clamped to [0, 255].
    """
    rng = np.random.default_rng(spec.seed)
    shape = (spec.height, spec.width)
    background = _texture(shape, spec.background, rng)
    lesion = _texture(shape, spec.lesion, rng)

    truth = ellipse_mask(spec.width, spec.height, spec.center, spec.semi_axes)
    image = np.clip(np.where(truth, lesion, background), 0.0, 255.0)

    valid = np.zeros(shape, dtype=bool)
    valid[1:-1, 1:-1] = True
    return image, valid, truth


def sample_spec(width, height, seed, index=0):
    """Draw a randomized phantom spec for benchmark suite entry ``index``.

    Texture parameters and lesion geometry vary from phantom to phantom so
    the two tissue classes are heterogeneous across a generated dataset.
    """
    rng = np.random.default_rng([seed, index])
    background = TextureParams(
        base_intensity=rng.uniform(70.0, 110.0),
        noise_amplitude=rng.uniform(6.0, 14.0),
        smoothing_sigma=rng.uniform(1.2, 2.2),
    )
    lesion = TextureParams(
        base_intensity=rng.uniform(150.0, 185.0),
        noise_amplitude=rng.uniform(30.0, 55.0),
        smoothing_sigma=0.0,
    )
    rx = rng.uniform(0.16, 0.26) * width
    ry = rng.uniform(0.14, 0.22) * height
    cx = rng.uniform(rx + 3, width - 4 - rx)
    cy = rng.uniform(ry + 3, height - 4 - ry)
    return PhantomSpec(
        width=width,
        height=height,
        background=background,
        lesion=lesion,
        center=(cx, cy),
        semi_axes=(rx, ry),
        seed=int(rng.integers(2**63)),
    )
