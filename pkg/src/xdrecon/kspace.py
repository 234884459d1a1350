"""Complex slices, centered orthonormal FFTs, Cartesian sampling masks and
data consistency.

A :class:`ComplexImage` holds either an image or its k-space; which one is
implied by the function receiving it. All transforms use the centered
convention (DC at index ``(H // 2, W // 2)``) with orthonormal scaling, so
``fft2c`` is unitary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "ComplexImage",
    "SamplingMask",
    "ConfigError",
    "fft2c",
    "ifft2c",
    "fft2c_array",
    "ifft2c_array",
    "generate_mask",
    "undersample",
    "data_consistency",
    "derive_seed",
]

MASK_MODES = ("lines-1d", "points-2d")
# integer weight resolution for the variable-density sampler
_WEIGHT_SCALE = float(2**32)
_MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Parameters that cannot describe a valid object (infeasible mask, bad config)."""


@dataclass(frozen=True, eq=False)
class ComplexImage:
    """A 2D complex slice stored as float32 real and imaginary planes."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        real = np.ascontiguousarray(self.real, dtype=np.float32)
        imag = np.ascontiguousarray(self.imag, dtype=np.float32)
        if real.ndim != 2 or real.shape != imag.shape:
            raise ValueError(f"real/imag planes must be 2D with equal shape, got {real.shape} and {imag.shape}")
        if real.shape[0] < 1 or real.shape[1] < 1:
            raise ValueError("empty image")
        if not (np.isfinite(real).all() and np.isfinite(imag).all()):
            raise ValueError("ComplexImage values must be finite")
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "imag", imag)

    @classmethod
    def from_array(cls, arr) -> "ComplexImage":
        arr = np.asarray(arr)
        return cls(arr.real, arr.imag if np.iscomplexobj(arr) else np.zeros(arr.shape, np.float32))

    @classmethod
    def zeros(cls, height: int, width: int) -> "ComplexImage":
        z = np.zeros((height, width), np.float32)
        return cls(z, z)

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    @property
    def height(self) -> int:
        return self.real.shape[0]

    @property
    def width(self) -> int:
        return self.real.shape[1]

    def to_array(self, dtype=np.complex128) -> np.ndarray:
        out = np.empty(self.shape, dtype=dtype)
        out.real = self.real
        out.imag = self.imag
        return out

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real.astype(np.float64), self.imag.astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, ComplexImage):
            return NotImplemented
        return np.array_equal(self.real, other.real) and np.array_equal(self.imag, other.imag)

    def __repr__(self):
        return f"ComplexImage(height={self.height}, width={self.width})"


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean k-space sampling pattern plus the arguments that generated it."""

    sampled: np.ndarray
    acceleration: float
    center_fraction: float
    mode: str = "lines-1d"
    seed: int = 0
    sigma: float = 0.25

    def __post_init__(self):
        sampled = np.ascontiguousarray(self.sampled, dtype=bool)
        if sampled.ndim != 2:
            raise ValueError("mask must be 2D")
        if self.mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mode!r}")
        object.__setattr__(self, "sampled", sampled)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sampled.shape

    @property
    def height(self) -> int:
        return self.sampled.shape[0]

    @property
    def width(self) -> int:
        return self.sampled.shape[1]

    @property
    def fraction(self) -> float:
        return float(self.sampled.mean())

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (
            np.array_equal(self.sampled, other.sampled)
            and self.acceleration == other.acceleration
            and self.center_fraction == other.center_fraction
            and self.mode == other.mode
            and self.seed == other.seed
            and self.sigma == other.sigma
        )


def fft2c_array(x: np.ndarray) -> np.ndarray:
    x = np.fft.ifftshift(x, axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c_array(k: np.ndarray) -> np.ndarray:
    k = np.fft.ifftshift(k, axes=(-2, -1))
    k = np.fft.ifft2(k, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def fft2c(img: ComplexImage) -> ComplexImage:
    """Centered, orthonormal 2D DFT (image -> k-space)."""
    return ComplexImage.from_array(fft2c_array(img.to_array()))


def ifft2c(ksp: ComplexImage) -> ComplexImage:
    """Inverse of :func:`fft2c` (k-space -> image)."""
    return ComplexImage.from_array(ifft2c_array(ksp.to_array()))


def derive_seed(base: int, index: int) -> int:
    """Mix ``(base, index)`` into an independent 64-bit seed (splitmix64 finaliser)."""
    z = (int(base) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _center_band(n: int, n_center: int) -> np.ndarray:
    start = n // 2 - n_center // 2
    return np.arange(start, start + n_center)


def generate_mask(
    height: int,
    width: int,
    acceleration: float = 4.0,
    center_fraction: float = 0.08,
    sigma: float = 0.25,
    mode: str = "lines-1d",
    seed: int = 0,
) -> SamplingMask:
    """Gaussian variable-density Cartesian sampling mask.

    In ``lines-1d`` mode whole columns (phase-encode lines) are sampled;
    ``round(width / acceleration)`` of them in total, of which the
    ``round(center_fraction * width)`` around DC are always kept. The rest are
    drawn one at a time without replacement, each remaining line with
    probability proportional to ``exp(-d**2 / (2 * (sigma * width / 2)**2))``,
    ``d`` being its distance from the DC column. ``points-2d`` does the same
    over individual pixels with the radial distance from DC and half-width
    ``min(height, width) / 2``; its center band is the
    ``round(center_fraction * height * width)`` pixels nearest DC.

    Randomness comes from raw 64-bit outputs of numpy's PCG64 generator seeded
    with ``seed``, so a given argument tuple always yields the same mask.
    """
    if height < 1 or width < 1:
        raise ConfigError("mask dimensions must be positive")
    if not acceleration >= 1.0 or not math.isfinite(acceleration):
        raise ConfigError(f"acceleration must be >= 1, got {acceleration}")
    if not 0.0 <= center_fraction <= 1.0:
        raise ConfigError(f"center_fraction must lie in [0, 1], got {center_fraction}")
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if mode not in MASK_MODES:
        raise ConfigError(f"unknown mask mode {mode!r}")
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    if mode == "lines-1d":
        n = width
        dist = np.abs(np.arange(width) - width // 2).astype(np.float64)
        halfwidth = width / 2.0
        n_center = int(round(center_fraction * width))
        center = _center_band(width, n_center)
    else:
        n = height * width
        yy, xx = np.meshgrid(np.arange(height) - height // 2, np.arange(width) - width // 2, indexing="ij")
        dist = np.hypot(yy, xx).ravel().astype(np.float64)
        halfwidth = min(height, width) / 2.0
        n_center = int(round(center_fraction * n))
        center = np.argsort(dist, kind="stable")[:n_center]

    budget = int(round(n / acceleration))
    if n_center > budget:
        raise ConfigError(
            f"center band of {n_center} exceeds the sampling budget of {budget} "
            f"(acceleration {acceleration}, center_fraction {center_fraction})"
        )

    chosen = np.zeros(n, dtype=bool)
    chosen[center] = True
    n_draw = budget - n_center
    if n_draw > 0:
        w = np.exp(-(dist**2) / (2.0 * (sigma * halfwidth) ** 2))
        weights = np.floor(w * _WEIGHT_SCALE).astype(np.uint64) + np.uint64(1)
        weights[center] = 0
        raw = np.random.Generator(np.random.PCG64(seed)).bit_generator.random_raw(n_draw)
        raw = np.ascontiguousarray(raw, dtype=np.uint64)
        picks = kernels.weighted_sample(np.ascontiguousarray(weights), raw)
        chosen[picks] = True

    if mode == "lines-1d":
        sampled = np.broadcast_to(chosen[None, :], (height, width)).copy()
    else:
        sampled = chosen.reshape(height, width)
    return SamplingMask(sampled, float(acceleration), float(center_fraction), mode, seed, float(sigma))


def _check_shapes(*items):
    shapes = {tuple(it.shape) for it in items}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {[tuple(it.shape) for it in items]}")


def undersample(gt: ComplexImage, mask: SamplingMask) -> tuple[ComplexImage, ComplexImage]:
    """Retrospective undersampling: returns ``(kspace_us, zero_filled)``."""
    _check_shapes(gt, mask)
    k = fft2c_array(gt.to_array()) * mask.sampled
    return ComplexImage.from_array(k), ComplexImage.from_array(ifft2c_array(k))


def dc_kspace(k_pred: np.ndarray, k_meas: np.ndarray, sampled: np.ndarray, lam: float) -> np.ndarray:
    """Blend measured into predicted k-space on the sampled positions."""
    if lam == math.inf:
        blended = k_meas
    else:
        blended = (k_pred + lam * k_meas) / (1.0 + lam)
    return np.where(sampled, blended, k_pred)


def data_consistency(
    pred: ComplexImage, kspace_us: ComplexImage, mask: SamplingMask, lam: float = math.inf
) -> ComplexImage:
    """Project ``pred`` towards the measurements.

    On sampled positions the k-space becomes ``(k_pred + lam * k_meas) / (1 + lam)``;
    ``lam = inf`` replaces it by the measured values and ``lam = 0`` leaves
    ``pred`` unchanged. Unsampled positions keep the prediction.
    """
    _check_shapes(pred, kspace_us, mask)
    lam = float(lam)
    if math.isnan(lam) or lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    k = dc_kspace(fft2c_array(pred.to_array()), kspace_us.to_array(), mask.sampled, lam)
    return ComplexImage.from_array(ifft2c_array(k))
