"""Deep cascade of CNNs with data-consistency layers.

Each cascade applies a residual CNN block to the current 2-channel
(real, imag) estimate and then enforces consistency with the measured
k-space. The last convolution of every block starts at zero, so a freshly
initialised network is the identity followed by data consistency.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .kspace import ComplexImage, SamplingMask

CKPT_MAGIC = b"CKPT1"
FORMAT_VERSION = 1


class NonFiniteError(RuntimeError):
    pass


@dataclass(frozen=True)
class CascadeConfig:
    n_cascades: int = 5
    n_conv_per_block: int = 5
    n_filters: int = 48
    kernel_size: int = 3
    dc_lambda: float = math.inf
    input_channels: int = 2

    def __post_init__(self):
        if self.n_cascades < 1:
            raise ValueError("n_cascades must be >= 1")
        if self.n_conv_per_block < 2:
            raise ValueError("n_conv_per_block must be >= 2")
        if self.n_filters < 1:
            raise ValueError("n_filters must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if math.isnan(self.dc_lambda) or self.dc_lambda < 0:
            raise ValueError("dc_lambda must be nonnegative")
        if self.input_channels != 2:
            raise ValueError("input_channels is fixed at 2 (real, imag)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dc_lambda"] = "inf" if math.isinf(self.dc_lambda) else self.dc_lambda
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        d = dict(d)
        if "dc_lambda" in d:
            d["dc_lambda"] = float(d["dc_lambda"])
        return cls(**d)


def fft2c_t(x: torch.Tensor) -> torch.Tensor:
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.fft2(x, norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c_t(k: torch.Tensor) -> torch.Tensor:
    k = torch.fft.ifftshift(k, dim=(-2, -1))
    k = torch.fft.ifft2(k, norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


def to_complex(x: torch.Tensor) -> torch.Tensor:
    """(B, 2, H, W) real -> (B, H, W) complex."""
    return torch.complex(x[:, 0], x[:, 1])


def to_channels(z: torch.Tensor) -> torch.Tensor:
    return torch.stack((z.real, z.imag), dim=1)


class DataConsistency(nn.Module):
    def __init__(self, lam: float = math.inf):
        super().__init__()
        self.lam = float(lam)

    def forward(self, x, k_meas, mask):
        """``x``: (B, 2, H, W) image; ``k_meas``: (B, H, W) complex; ``mask``: (B, H, W) bool."""
        k = fft2c_t(to_complex(x))
        if math.isinf(self.lam):
            blended = k_meas
        else:
            blended = (k + self.lam * k_meas) / (1.0 + self.lam)
        k = torch.where(mask, blended, k)
        return to_channels(ifft2c_t(k))


class ConvBlock(nn.Module):
    def __init__(self, n_conv: int, n_filters: int, kernel_size: int):
        super().__init__()
        pad = kernel_size // 2
        chans = [2] + [n_filters] * (n_conv - 1) + [2]
        layers = []
        for i in range(n_conv):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], kernel_size, padding=pad))
            if i < n_conv - 1:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class CascadeNet(nn.Module):
    def __init__(self, config: CascadeConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(
            ConvBlock(config.n_conv_per_block, config.n_filters, config.kernel_size)
            for _ in range(config.n_cascades)
        )
        self.dc = DataConsistency(config.dc_lambda)

    def forward(self, x, k_meas, mask, check_finite: bool = True):
        for c, block in enumerate(self.blocks):
            x = self.dc(x + block(x), k_meas, mask)
            if check_finite and not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite activations after cascade {c}")
        return x


def init_model(config: CascadeConfig, seed: int = 0, zero_last: bool = True) -> CascadeNet:
    """Build a :class:`CascadeNet` with seeded initialisation.

    With ``zero_last`` (the default) the final convolution of every block is
    zeroed so the untrained network reduces to chained data consistency.
    """
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
        model = CascadeNet(config)
    finally:
        torch.random.set_rng_state(gen_state)
    if zero_last:
        with torch.no_grad():
            for block in model.blocks:
                last = block.net[-1]
                last.weight.zero_()
                last.bias.zero_()
    return model


def n_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def image_to_tensor(img: ComplexImage) -> torch.Tensor:
    return torch.from_numpy(np.stack([img.real, img.imag]))[None]


def tensor_to_image(x: torch.Tensor) -> ComplexImage:
    x = x.detach().cpu().numpy()
    return ComplexImage(x[0, 0], x[0, 1])


def kspace_to_tensor(ksp: ComplexImage) -> torch.Tensor:
    return torch.from_numpy(ksp.to_array(np.complex64))[None]


def mask_to_tensor(mask: SamplingMask) -> torch.Tensor:
    return torch.from_numpy(mask.sampled)[None]


def forward(model: CascadeNet, zero_filled: ComplexImage, kspace_us: ComplexImage, mask: SamplingMask) -> ComplexImage:
    """Reconstruct one slice from its zero-filled image and measured k-space."""
    shapes = {zero_filled.shape, kspace_us.shape, mask.shape}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")
    k = min(zero_filled.shape)
    if k < model.config.kernel_size:
        raise ValueError(f"slice {zero_filled.shape} is smaller than the kernel")
    with torch.no_grad():
        out = model(image_to_tensor(zero_filled), kspace_to_tensor(kspace_us), mask_to_tensor(mask))
    return tensor_to_image(out)


def loss(pred, gt) -> float | torch.Tensor:
    """Mean over pixels of squared complex error, ``mean((dRe)^2 + (dIm)^2)``.

    Accepts two :class:`ComplexImage` (returns a float) or two (B, 2, H, W)
    tensors (returns a differentiable scalar).
    """
    if isinstance(pred, ComplexImage):
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
        dr = pred.real.astype(np.float64) - gt.real
        di = pred.imag.astype(np.float64) - gt.imag
        return float(np.mean(dr * dr + di * di))
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return ((pred - gt) ** 2).sum(dim=1).mean()


# -- checkpoints -------------------------------------------------------------
#
# Blob encoding: the model's state_dict tensors in registration order, each as
# contiguous little-endian float32, concatenated. The JSON header lists
# name/shape/offset/nbytes for every tensor and a sha256 of the blob.


@dataclass
class CascadeCheckpoint:
    config: CascadeConfig
    parameters: bytes
    training_meta: dict
    tensors: list
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: CascadeNet, training_meta: dict | None = None) -> "CascadeCheckpoint":
        parts, tensors, offset = [], [], 0
        for name, t in model.state_dict().items():
            b = t.detach().cpu().contiguous().numpy().astype("<f4").tobytes()
            tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(b)})
            parts.append(b)
            offset += len(b)
        return cls(model.config, b"".join(parts), dict(training_meta or {}), tensors)

    def build_model(self) -> CascadeNet:
        model = CascadeNet(self.config)
        state = {}
        for spec in self.tensors:
            raw = self.parameters[spec["offset"] : spec["offset"] + spec["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f4").reshape(spec["shape"]).astype(np.float32)
            state[spec["name"]] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
        return model

    def header(self) -> dict:
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "training_meta": self.training_meta,
            "tensors": self.tensors,
            "blob_sha256": hashlib.sha256(self.parameters).hexdigest(),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return CKPT_MAGIC + head.encode("utf-8") + b"\n" + self.parameters

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "CascadeCheckpoint":
        if data[:5] != CKPT_MAGIC:
            raise ValueError(f"{source}: not a CKPT1 checkpoint")
        nl = data.find(b"\n", 5)
        if nl < 0:
            raise ValueError(f"{source}: unterminated checkpoint header")
        head = json.loads(data[5:nl].decode("utf-8"))
        blob = data[nl + 1 :]
        if head.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{source}: unsupported format_version {head.get('format_version')}")
        if hashlib.sha256(blob).hexdigest() != head["blob_sha256"]:
            raise ValueError(f"{source}: parameter blob checksum mismatch")
        return cls(CascadeConfig.from_dict(head["config"]), blob, head["training_meta"], head["tensors"])

    @classmethod
    def load(cls, path) -> "CascadeCheckpoint":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), str(path))
