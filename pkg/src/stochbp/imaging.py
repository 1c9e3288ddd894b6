"""Grayscale denoising on a 4-connected Potts grid.

Pixels are intensities in [0, 1]; state i of a node stands for gray level
i / (d - 1).  The observation potential is the Gaussian likelihood of the
noisy pixel given the level, and the readout picks each pixel's most
probable level under its (approximate) marginal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .bp import bp_sweep, compute_marginals, uniform_messages
from .model import PairwiseMRF, build_topology, potts_mrf
from .sbp import Harmonic, StepSchedule, run_sbp

# smallest node potential kept; far-off levels would otherwise underflow to 0
POTENTIAL_FLOOR = 1e-300


class PGMError(ValueError):
    pass


@dataclass(eq=False)
class GrayImage:
    """Row-major intensities, shape ``(height, width)``."""

    pixels: np.ndarray
    header: Optional[bytes] = field(default=None, repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2 or 0 in self.pixels.shape:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {self.pixels.shape}")
        if np.any(self.pixels < 0) or np.any(self.pixels > 1) or not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixel intensities must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255)


def _header_fields(data: bytes) -> tuple[list[int], int]:
    """Parse width, height, maxval after the magic; return them and the
    offset of the first raster byte."""
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise PGMError(f"truncated header at byte {pos}")
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PGMError(f"unterminated comment at byte {pos}")
            pos = end + 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise PGMError(f"unexpected byte {c!r} in header at byte {pos}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PGMError(f"expected one whitespace byte after maxval at byte {pos}")
    return fields, pos + 1


def read_pgm(path) -> GrayImage:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic == b"P2":
        raise PGMError(f"{path}: ASCII PGM (P2) is not supported; only binary P5 is accepted (byte 0)")
    if magic != b"P5":
        raise PGMError(f"{path}: bad magic {magic!r} at byte 0, expected b'P5'")
    (width, height, maxval), start = _header_fields(data)
    if width < 1 or height < 1:
        raise PGMError(f"{path}: image dimensions must be positive, got {width}x{height}")
    if maxval != 255:
        raise PGMError(f"{path}: maxval {maxval} unsupported, expected 255")
    n = width * height
    raster = data[start:]
    if len(raster) != n:
        raise PGMError(f"{path}: expected {n} raster bytes from byte {start}, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width) / 255.0
    return GrayImage(pixels, header=data[:start])


def write_pgm(img: GrayImage, path) -> None:
    """Write P5; a header read from a file of the same size is reused verbatim."""
    raw = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    header = img.header
    if header is None or _header_fields(header + b"\0")[0][:2] != [img.width, img.height]:
        header = f"P5\n{img.width} {img.height}\n255\n".encode()
    try:
        Path(path).write_bytes(header + raw.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# pipeline


def add_gaussian_noise(img: GrayImage, sigma: float, seed: int) -> GrayImage:
    """One N(0, sigma^2) draw per pixel in row-major order, clamped to [0, 1]."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=img.pixels.shape)
    return GrayImage(np.clip(img.pixels + noise, 0.0, 1.0))


def gray_levels(d: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, d)


def quantize(img: GrayImage, d: int) -> GrayImage:
    """Snap every pixel to its nearest level (ties to the lower level)."""
    levels = gray_levels(d)
    idx = np.argmin(np.abs(img.pixels[..., None] - levels), axis=-1)
    return GrayImage(levels[idx])


@dataclass(frozen=True)
class DenoiseConfig:
    d: int = 16
    eta: float = 0.05
    noise_sigma: float = 0.1
    schedule: StepSchedule = Harmonic(1.0)
    T_bp: int = 5
    T_sbp: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"need at least two gray levels, got d={self.d}")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")


def preset_config(full_scale: bool = False, **overrides) -> DenoiseConfig:
    """Desk-scale defaults (64x64 images, d = 16) or the full 256-level setup."""
    base = DenoiseConfig(d=256) if full_scale else DenoiseConfig()
    return replace(base, **overrides)


def image_mrf(noisy: GrayImage, config: DenoiseConfig) -> PairwiseMRF:
    """Grid MRF with node (r, c) at index r * width + c.

    psi_u(i) = exp(-(y_u - s_i)^2 / (2 sigma^2)), divided by its max over i
    (harmless: messages are normalised) and floored at ``POTENTIAL_FLOOR``.
    """
    top = build_topology("grid", noisy.height, noisy.width)
    y = noisy.pixels.reshape(-1, 1)
    sq = (y - gray_levels(config.d)[None, :]) ** 2 / (2.0 * config.noise_sigma**2)
    psi = np.maximum(np.exp(-(sq - sq.min(axis=1, keepdims=True))), POTENTIAL_FLOOR)
    return potts_mrf(top, config.d, config.eta, psi)


def pixel_mse(a: GrayImage, b: GrayImage) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    return float(np.mean((a.pixels - b.pixels) ** 2))


class DenoiseMetrics(NamedTuple):
    method: str
    iterations: int
    seconds: float
    mse: Optional[float]
    noisy_mse: Optional[float]


def denoise(
    noisy: GrayImage, config: DenoiseConfig, method: str = "sbp", clean: Optional[GrayImage] = None
) -> tuple[GrayImage, DenoiseMetrics]:
    """Run BP for ``T_bp`` or SBP for ``T_sbp`` rounds and read out per-pixel
    marginal argmaxes."""
    method = method.lower()
    mrf = image_mrf(noisy, config)
    start = time.perf_counter()
    if method == "bp":
        M = uniform_messages(mrf.topology, config.d)
        for _ in range(config.T_bp):
            M = bp_sweep(mrf, M)
        iterations = config.T_bp
    elif method == "sbp":
        M = run_sbp(mrf, None, config.schedule, config.seed, config.T_sbp).messages
        iterations = config.T_sbp
    else:
        raise ValueError(f"method must be 'bp' or 'sbp', got {method!r}")
    marg = compute_marginals(mrf, M)
    seconds = time.perf_counter() - start
    levels = gray_levels(config.d)
    out = GrayImage(levels[np.argmax(marg, axis=1)].reshape(noisy.pixels.shape))
    mse = pixel_mse(out, clean) if clean is not None else None
    noisy_mse = pixel_mse(noisy, clean) if clean is not None else None
    return out, DenoiseMetrics(method, iterations, seconds, mse, noisy_mse)


def synthetic_image(size: int = 64, d: int = 16) -> GrayImage:
    """Deterministic piecewise-constant test card on the d-level grid."""
    levels = gray_levels(d)
    r, c = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.full((size, size), levels[d // 5])
    img[(r > 0.15) & (r < 0.55) & (c > 0.1) & (c < 0.45)] = levels[(3 * d) // 5]
    img[(r - 0.65) ** 2 + (c - 0.65) ** 2 < 0.06] = levels[d - 2]
    img[(r > 0.7) & (c < 0.35)] = levels[(2 * d) // 5]
    img[(c > 0.8) & (r < 0.3)] = levels[1]
    return GrayImage(img)
