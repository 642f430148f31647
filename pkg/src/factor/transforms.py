"""Deterministic attribute-level image operators and their composition.

Six operators perturb non-causal appearance factors (brightness, contrast,
blur, noise, texture, weather) while preserving image dimensions and object
geometry. Conventions pinned for reproducibility:

- float -> u8 conversion rounds half away from zero, then clamps to [0, 255]
- brightness uses the inverse parameterization: effective exponent is
  1/gamma_prime on [0, 1]-normalized intensities, so gamma_prime < 1 darkens
- blur uses a normalized Gaussian kernel with sigma = kernel_size / 3 and
  reflect-101 borders
- texture resizes bilinearly both directions (half-pixel-center mapping)
- the weather blend target "full intensity" is 255
- noise is drawn from a generator seeded by (noise_seed, image_id)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .interchange import Image, TransformParams

__all__ = [
    "TransformParams",
    "PixelDiffReport",
    "ParameterError",
    "t_brightness",
    "t_contrast",
    "t_blur",
    "t_noise",
    "t_texture",
    "t_weather",
    "compose_counterfactual",
    "pixel_diff_report",
]


class ParameterError(ValueError):
    """An operator parameter is outside its legal range."""


@dataclass(frozen=True)
class PixelDiffReport:
    """Pixel-level discrepancy between an image and its counterfactual."""

    delta_mu: float
    delta_std: float
    delta_max: float
    relative_change_pct: float

    def __post_init__(self):
        assert self.delta_max >= self.delta_mu >= 0
        assert abs(self.relative_change_pct - self.delta_mu / 255.0 * 100.0) <= 1e-9


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(_round_half_away(x), 0.0, 255.0).astype(np.uint8)


def t_brightness(img: Image, gamma_prime: float) -> Image:
    """Darken via gamma correction; exponent applied is 1/gamma_prime."""
    if not gamma_prime > 0:
        raise ParameterError(f"gamma_prime must be > 0, got {gamma_prime}")
    x = img.pixels.astype(np.float64) / 255.0
    out = 255.0 * np.power(x, 1.0 / gamma_prime)
    return Image(_to_u8(out))


def t_contrast(img: Image, alpha: float) -> Image:
    """Compress dynamic range by linear intensity scaling."""
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    return Image(_to_u8(alpha * img.pixels.astype(np.float64)))


def _gaussian_kernel_1d(kernel_size: int) -> np.ndarray:
    if kernel_size == 1:
        return np.array([1.0])
    sigma = kernel_size / 3.0
    half = kernel_size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return w / w.sum()


def _reflect101_indices(n: int, half: int) -> np.ndarray:
    # index sequence -half..n-1+half folded as reflect-101 (edge not repeated)
    idx = np.arange(-half, n + half)
    idx = np.abs(idx)
    over = idx > n - 1
    idx[over] = 2 * (n - 1) - idx[over]
    return idx


def t_blur(img: Image, kernel_size: int) -> Image:
    """Separable Gaussian blur with reflect-101 border handling."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    if kernel_size > min(img.width, img.height):
        raise ParameterError(
            f"kernel_size {kernel_size} exceeds image size "
            f"{img.width}x{img.height}"
        )
    if kernel_size == 1:
        return img
    w = _gaussian_kernel_1d(kernel_size)
    half = kernel_size // 2
    x = img.pixels.astype(np.float64)
    rows = _reflect101_indices(img.height, half)
    padded = x[rows, :, :]
    x = sum(w[j] * padded[j : j + img.height] for j in range(kernel_size))
    cols = _reflect101_indices(img.width, half)
    padded = x[:, cols, :]
    x = sum(w[j] * padded[:, j : j + img.width] for j in range(kernel_size))
    return Image(_to_u8(x))


def _noise_rng(seed: int, image_id: str) -> np.random.Generator:
    digest = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "little")])
    )


def t_noise(img: Image, sigma_noise: float, seed: int, image_id: str = "") -> Image:
    """Additive Gaussian noise, i.i.d. per channel, deterministic per seed."""
    if sigma_noise < 0:
        raise ParameterError(f"sigma_noise must be >= 0, got {sigma_noise}")
    if sigma_noise == 0:
        return img
    rng = _noise_rng(seed, image_id)
    eps = rng.standard_normal(img.pixels.shape) * sigma_noise
    return Image(_to_u8(img.pixels.astype(np.float64) + eps))


def _bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = x.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return x
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = x[y0][:, x0] * (1 - wx) + x[y0][:, x1] * wx
    bot = x[y1][:, x0] * (1 - wx) + x[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def t_texture(img: Image, theta: float) -> Image:
    """Degrade texture by bilinear downsample then upsample back."""
    if not 0 < theta <= 1:
        raise ParameterError(f"theta must be in (0, 1], got {theta}")
    if theta == 1:
        return img
    low_w = int(np.floor(theta * img.width))
    low_h = int(np.floor(theta * img.height))
    if low_w < 1 or low_h < 1:
        raise ParameterError(
            f"theta {theta} gives degenerate intermediate size "
            f"{low_w}x{low_h} for image {img.width}x{img.height}"
        )
    x = img.pixels.astype(np.float64)
    x = _bilinear_resize(x, low_h, low_w)
    x = _bilinear_resize(x, img.height, img.width)
    return Image(_to_u8(x))


def t_weather(img: Image, beta: float) -> Image:
    """Blend toward a uniform full-intensity field (haze)."""
    if not 0 <= beta < 1:
        raise ParameterError(f"beta must be in [0, 1), got {beta}")
    out = (1.0 - beta) * img.pixels.astype(np.float64) + beta * 255.0
    return Image(_to_u8(out))


def compose_counterfactual(
    img: Image, params: TransformParams, image_id: str = ""
) -> Image:
    """Apply all six operators sequentially.

    Order is fixed (brightness, contrast, blur, noise, texture, weather)
    because the operators do not commute.
    """
    out = t_brightness(img, params.gamma_prime)
    out = t_contrast(out, params.alpha)
    out = t_blur(out, params.kernel_size)
    out = t_noise(out, params.sigma_noise, params.noise_seed, image_id)
    out = t_texture(out, params.theta)
    out = t_weather(out, params.beta)
    return out


def pixel_diff_report(original: Image, counterfactual: Image) -> PixelDiffReport:
    """Summarize absolute pixel differences between two same-sized images."""
    if original.pixels.shape != counterfactual.pixels.shape:
        raise ValueError(
            f"dimension mismatch: {original.width}x{original.height} vs "
            f"{counterfactual.width}x{counterfactual.height}"
        )
    diff = np.abs(
        original.pixels.astype(np.float64) - counterfactual.pixels.astype(np.float64)
    )
    delta_mu = float(diff.mean())
    return PixelDiffReport(
        delta_mu=delta_mu,
        delta_std=float(diff.std()),
        delta_max=float(diff.max()),
        relative_change_pct=delta_mu / 255.0 * 100.0,
    )
