"""Smooth synthetic phase for magnitude-only images.

The phase map is white Gaussian noise low-passed in the centered Fourier
domain and rescaled linearly onto ``[-phase_range, +phase_range]``. This is a
stand-in construction: it gives MRI-like slowly varying background phase, it
does not model any physical field.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .kspace import ComplexImage, fft2c_array, ifft2c_array

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class PhaseParams:
    smoothness_sigma: float = 16.0
    phase_range: float = math.pi
    seed: int = 0

    def __post_init__(self):
        if not self.smoothness_sigma > 0:
            raise ValueError(f"smoothness_sigma must be > 0, got {self.smoothness_sigma}")
        if not 0 < self.phase_range <= math.pi:
            raise ValueError(f"phase_range must lie in (0, pi], got {self.phase_range}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def image_seed(seed_base: int, image_id: str) -> int:
    """Per-image seed: ``seed_base XOR`` the first 8 bytes (little-endian) of
    ``sha256(image_id)``."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return (int(seed_base) ^ int.from_bytes(digest[:8], "little")) & _MASK64


def phase_map(shape: tuple[int, int], params: PhaseParams) -> np.ndarray:
    """The phase field (radians, float64) that :func:`synthesize_phase` applies."""
    h, w = shape
    rng = np.random.Generator(np.random.PCG64(int(params.seed)))
    noise = rng.standard_normal((h, w))
    # spatial sigma s <-> frequency sigma N / (2 pi s), per axis, in DFT index units
    fy = (np.arange(h) - h // 2) / (h / (2 * math.pi * params.smoothness_sigma))
    fx = (np.arange(w) - w // 2) / (w / (2 * math.pi * params.smoothness_sigma))
    filt = np.exp(-0.5 * (fy[:, None] ** 2 + fx[None, :] ** 2))
    field = ifft2c_array(fft2c_array(noise) * filt).real
    lo, hi = field.min(), field.max()
    if hi - lo <= 0:
        return np.zeros((h, w))
    phi = (field - lo) / (hi - lo) * (2 * params.phase_range) - params.phase_range
    return np.clip(phi, -params.phase_range, params.phase_range)


def synthesize_phase(magnitude, params: PhaseParams) -> ComplexImage:
    """Attach a smooth random phase to a real image with values in [0, 1]."""
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.ndim != 2:
        raise ValueError("magnitude must be a 2D array")
    if not np.isfinite(mag).all():
        raise ValueError("magnitude contains non-finite values")
    if mag.min() < 0 or mag.max() > 1:
        raise ValueError(f"magnitude must lie in [0, 1], got range [{mag.min()}, {mag.max()}]")
    phi = phase_map(mag.shape, params)
    return ComplexImage(mag * np.cos(phi), mag * np.sin(phi))


def mean_phase_gradient(phi: np.ndarray) -> float:
    """Mean absolute forward difference of a phase map over both axes."""
    dy = np.abs(np.diff(phi, axis=0))
    dx = np.abs(np.diff(phi, axis=1))
    return float((dy.sum() + dx.sum()) / (dy.size + dx.size))
