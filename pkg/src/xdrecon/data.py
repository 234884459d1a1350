"""Dataset ingestion: CIMG1 slice directories, natural-image directories with
synthetic phase, and procedural phantoms used as stand-in MRI domains."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .kspace import ComplexImage, derive_seed
from .phase import PhaseParams, image_seed, synthesize_phase

log = logging.getLogger(__name__)

KINDS = ("complex-slices", "natural-images", "phantom")
SPLITS = ("train", "val", "test")
FAMILIES = ("ellipses", "rectangles", "mixed")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSpec:
    id: str
    kind: str
    root: str = ""
    target_shape: tuple[int, int] = (64, 64)
    split: str = "train"
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    phase_params: PhaseParams = field(default_factory=PhaseParams)
    phantom_family: str = "ellipses"
    count: int = 0
    seed: int = 0

    def __post_init__(self):
        self.target_shape = tuple(int(v) for v in self.target_shape)
        self.split_fractions = tuple(float(v) for v in self.split_fractions)
        if isinstance(self.phase_params, dict):
            self.phase_params = PhaseParams(**self.phase_params)
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if len(self.target_shape) != 2 or min(self.target_shape) < 32:
            raise DatasetError(f"target_shape must be at least (32, 32), got {self.target_shape}")
        fr = self.split_fractions
        if len(fr) != 3 or min(fr) < 0 or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise DatasetError(f"split_fractions must be 3 nonnegative values summing to 1, got {fr}")
        if self.kind == "phantom" and self.phantom_family not in FAMILIES:
            raise DatasetError(f"unknown phantom family {self.phantom_family!r}")

    def with_split(self, split: str) -> "DatasetSpec":
        d = self.to_dict()
        d["split"] = split
        return DatasetSpec.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_shape"] = list(self.target_shape)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass
class LoadReport:
    scanned: int = 0
    decoded: int = 0
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"scanned": self.scanned, "decoded": self.decoded, "skipped": list(self.skipped)}


def normalize_slice(img: ComplexImage) -> tuple[ComplexImage, float]:
    """Scale so the largest magnitude is 1; returns the slice and the divisor."""
    scale = float(img.magnitude().max())
    if scale == 0.0:
        raise ValueError("cannot normalise an all-zero slice")
    # float32 storage puts a normalised peak a few ulp away from 1
    if abs(scale - 1.0) <= 1e-6:
        return img, 1.0
    return ComplexImage(img.real / scale, img.imag / scale), scale


def denormalize_slice(img: ComplexImage, scale: float) -> ComplexImage:
    if scale == 1.0:
        return img
    return ComplexImage(img.real.astype(np.float64) * scale, img.imag.astype(np.float64) * scale)


def split_indices(n: int, fractions, split: str) -> range:
    n_train = int(round(n * fractions[0]))
    n_val = min(int(round(n * fractions[1])), n - n_train)
    bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, n)}
    return range(*bounds[split])


def _ordered_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _split_files(spec: DatasetSpec, suffixes) -> list[Path]:
    root = Path(spec.root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    sub = root / spec.split
    if sub.is_dir():
        return sorted(p for p in sub.iterdir() if p.suffix.lower() in suffixes)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in suffixes)
    return [files[i] for i in split_indices(len(files), spec.split_fractions, spec.split)]


def load_complex_dataset(spec: DatasetSpec, workers: int = 1) -> list[ComplexImage]:
    """Load the ``*.cimg`` slices of ``spec.split`` in filename order, each
    normalised to unit peak magnitude."""
    files = _split_files(spec, (".cimg",))
    if not files:
        raise DatasetError(f"no .cimg slices for split {spec.split!r} under {spec.root}")

    def load(path):
        img = io.load_image(path)
        try:
            return normalize_slice(img)[0]
        except ValueError as exc:
            raise DatasetError(f"{path}: {exc}") from exc

    return _ordered_map(load, files, workers)


def luma(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB (or gray) array -> float64 luma in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb / 255.0
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(y / 255.0, 0.0, 1.0)


def crop_resize(gray: np.ndarray, target_shape) -> np.ndarray:
    """Center-crop to the largest centered square, then bilinear resize."""
    from PIL import Image

    h, w = gray.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    sq = np.ascontiguousarray(gray[top : top + side, left : left + side], dtype=np.float32)
    th, tw = target_shape
    if (side, side) == (th, tw):
        return sq.astype(np.float64)
    out = Image.fromarray(sq, mode="F").resize((tw, th), Image.BILINEAR)
    return np.clip(np.asarray(out, dtype=np.float64), 0.0, 1.0)


def decode_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        return np.asarray(im)


def load_natural_dataset(spec: DatasetSpec, workers: int = 1, report: LoadReport | None = None) -> list[ComplexImage]:
    """Grayscale, crop/resize and phase-synthesise every decodable image.

    Undecodable files are skipped and recorded in ``report``.
    """
    files = _split_files(spec, IMAGE_SUFFIXES)
    report = report if report is not None else LoadReport()
    report.scanned += len(files)

    def load(path):
        try:
            arr = decode_image(path)
        except Exception as exc:  # noqa: BLE001 - any decoder failure means skip
            return path, None, str(exc)
        mag = crop_resize(luma(arr), spec.target_shape)
        params = PhaseParams(
            spec.phase_params.smoothness_sigma,
            spec.phase_params.phase_range,
            image_seed(spec.phase_params.seed, path.name),
        )
        return path, synthesize_phase(mag, params), None

    out = []
    for path, img, err in _ordered_map(load, files, workers):
        if img is None:
            log.warning("skipping %s: %s", path, err)
            report.skipped.append({"file": str(path), "error": err})
            continue
        try:
            out.append(normalize_slice(img)[0])
        except ValueError:
            log.warning("skipping %s: blank image", path)
            report.skipped.append({"file": str(path), "error": "blank image"})
            continue
        report.decoded += 1
    return out


def _ellipse(yy, xx, rng):
    cy, cx = rng.uniform(-0.6, 0.6, 2)
    ay, ax = rng.uniform(0.08, 0.45, 2)
    theta = rng.uniform(0, math.pi)
    c, s = math.cos(theta), math.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _rectangle(yy, xx, rng):
    cy, cx = rng.uniform(-0.6, 0.6, 2)
    hy, hx = rng.uniform(0.06, 0.4, 2)
    return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)


def phantom_magnitude(shape, family: str, seed: int) -> np.ndarray:
    """One phantom: 3-8 shapes painted in order with intensities in [0.2, 1].

    ``mixed`` picks ellipse or rectangle independently for every shape.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    img = np.zeros(shape)
    for _ in range(int(rng.integers(3, 9))):
        kind = family if family != "mixed" else ("ellipses", "rectangles")[int(rng.integers(2))]
        region = _ellipse(yy, xx, rng) if kind == "ellipses" else _rectangle(yy, xx, rng)
        img[region] = rng.uniform(0.2, 1.0)
    if not img.any():
        img[h // 2, w // 2] = 1.0
    return img


def generate_phantoms(spec: DatasetSpec, count: int | None = None) -> list[ComplexImage]:
    """``count`` phantom slices (default ``spec.count``) with synthetic phase."""
    count = spec.count if count is None else count
    if count <= 0:
        raise DatasetError("phantom count must be positive")
    out = []
    for i in range(count):
        mag = phantom_magnitude(spec.target_shape, spec.phantom_family, derive_seed(spec.seed, i))
        params = PhaseParams(
            spec.phase_params.smoothness_sigma,
            spec.phase_params.phase_range,
            image_seed(spec.phase_params.seed ^ spec.seed, f"{spec.phantom_family}:{i}"),
        )
        out.append(synthesize_phase(mag, params))
    return out


def load_dataset(spec: DatasetSpec, workers: int = 1, report: LoadReport | None = None) -> list[ComplexImage]:
    """Slices for ``spec.split``, normalised to unit peak magnitude."""
    if spec.kind == "complex-slices":
        slices = load_complex_dataset(spec, workers)
    elif spec.kind == "natural-images":
        slices = load_natural_dataset(spec, workers, report)
    else:
        allp = generate_phantoms(spec)
        slices = [normalize_slice(allp[i])[0] for i in split_indices(len(allp), spec.split_fractions, spec.split)]
    if not slices:
        raise DatasetError(f"dataset {spec.id!r} split {spec.split!r} is empty")
    return slices


def export_dataset(slices, out_dir, prefix: str = "slice") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(slices))))
    paths = []
    for i, img in enumerate(slices):
        p = out_dir / f"{prefix}_{i:0{width}d}.cimg"
        io.save_image(p, img)
        paths.append(p)
    return paths
