"""Training loop and single-slice reconstruction."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetError, DatasetSpec, denormalize_slice, load_dataset, normalize_slice
from .kspace import ComplexImage, SamplingMask, derive_seed, fft2c_array, generate_mask, ifft2c_array
from .model import CascadeCheckpoint, CascadeConfig, CascadeNet, init_model, loss, tensor_to_image

log = logging.getLogger(__name__)

OPTIMIZERS = ("adaptive-moment", "sgd-momentum")
MASK_POLICIES = ("fixed", "per-sample")


class TrainingError(RuntimeError):
    pass


@dataclass
class MaskArgs:
    acceleration: float = 4.0
    center_fraction: float = 0.08
    sigma: float = 0.25
    mode: str = "lines-1d"
    seed: int = 0

    def make(self, shape, index: int | None = None) -> SamplingMask:
        """Mask for sample ``index`` (``None`` -> the fixed mask seeded by ``seed``)."""
        seed = self.seed if index is None else derive_seed(self.seed, index)
        return generate_mask(shape[0], shape[1], self.acceleration, self.center_fraction, self.sigma, self.mode, seed)


@dataclass
class TrainConfig:
    dataset: DatasetSpec
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    mask: MaskArgs = field(default_factory=MaskArgs)
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adaptive-moment"
    seed: int = 0
    checkpoint_dir: str | None = None
    mask_policy: str = "per-sample"
    log_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # lr = 0 is allowed: it gives a no-op run, useful for checking the harness
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a finite nonnegative number")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mask_policy not in MASK_POLICIES:
            raise ValueError(f"unknown mask_policy {self.mask_policy!r}")


@dataclass
class Batchset:
    """Undersampled inputs for a list of slices, stacked as tensors."""

    gt: torch.Tensor
    zf: torch.Tensor
    kspace: torch.Tensor
    mask: torch.Tensor

    def __len__(self):
        return self.gt.shape[0]

    def take(self, idx):
        return self.gt[idx], self.zf[idx], self.kspace[idx], self.mask[idx]


def prepare(slices: list[ComplexImage], mask_args: MaskArgs, policy: str, index_offset: int = 0) -> Batchset:
    """Normalise, mask and undersample every slice.

    ``policy="per-sample"`` gives slice ``i`` the mask seeded by
    ``derive_seed(mask_args.seed, index_offset + i)``.
    """
    shape = slices[0].shape
    fixed = mask_args.make(shape) if policy == "fixed" else None
    normed, masks = [], []
    for i, img in enumerate(slices):
        if img.shape != shape:
            raise DatasetError(f"slice {i} has shape {img.shape}, expected {shape}")
        normed.append(normalize_slice(img)[0])
        masks.append(fixed if fixed is not None else mask_args.make(shape, index_offset + i))
    return prepare_with_masks(normed, masks)


def magnitude_psnr(pred: torch.Tensor, gt: torch.Tensor) -> np.ndarray:
    """Per-sample PSNR (dB) of magnitude images, peak = ground-truth max."""
    pm = torch.linalg.vector_norm(pred.double(), dim=1)
    gm = torch.linalg.vector_norm(gt.double(), dim=1)
    mse = ((pm - gm) ** 2).flatten(1).mean(1)
    peak = gm.flatten(1).amax(1)
    with np.errstate(divide="ignore"):
        return (10 * torch.log10(peak**2 / mse)).numpy()


def evaluate(model: CascadeNet, data: Batchset, batch_size: int = 16) -> tuple[float, float]:
    """Mean loss and mean magnitude PSNR of ``model`` over ``data``."""
    model.eval()
    total, psnrs = 0.0, []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            gt, zf, k, m = data.take(sl)
            out = model(zf, k, m)
            total += float(((out.double() - gt.double()) ** 2).sum(dim=1).mean(dim=(1, 2)).sum())
            psnrs.append(magnitude_psnr(out, gt))
    return total / len(data), float(np.mean(np.concatenate(psnrs)))


def _optimizer(cfg: TrainConfig, model):
    if cfg.optimizer == "adaptive-moment":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=0.9)


def train(config: TrainConfig, train_slices=None, val_slices=None) -> CascadeCheckpoint:
    """Train a cascade on ``config.dataset`` and return the final checkpoint.

    Slices may be passed in directly; otherwise the dataset's ``train`` and
    ``val`` splits are loaded. Per-epoch records ``{epoch, split, loss, psnr}``
    go to ``config.log_path`` as JSON lines; epoch 0 is the untrained model.
    With a ``checkpoint_dir`` the best-validation-PSNR and final checkpoints
    are written there as ``best.ckpt`` and ``final.ckpt``.
    """
    if train_slices is None:
        train_slices = load_dataset(config.dataset.with_split("train"))
    if val_slices is None:
        try:
            val_slices = load_dataset(config.dataset.with_split("val"))
        except DatasetError:
            val_slices = []
    if not train_slices:
        raise DatasetError("training set is empty")
    shape = train_slices[0].shape

    tr = prepare(train_slices, config.mask, config.mask_policy)
    va = prepare(val_slices, config.mask, config.mask_policy, index_offset=len(train_slices)) if val_slices else None

    model = init_model(config.cascade, config.seed)
    opt = _optimizer(config, model)
    gen = torch.Generator().manual_seed(int(config.seed) & 0xFFFF_FFFF_FFFF_FFFF)

    history = []
    log_fh = open(config.log_path, "w") if config.log_path else None
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def record(epoch, split, loss_value, psnr_value):
        rec = {"epoch": epoch, "split": split, "loss": loss_value, "psnr": psnr_value}
        history.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    def meta(epoch, train_loss, val_loss, val_psnr):
        return {
            "dataset": config.dataset.id,
            "epochs": config.epochs,
            "epoch": epoch,
            "seed": int(config.seed),
            "final_loss": train_loss,
            "val_loss": val_loss,
            "val_psnr": val_psnr,
            "image_shape": list(shape),
            "mask": asdict(config.mask),
            "mask_policy": config.mask_policy,
        }

    try:
        train_loss, train_psnr = evaluate(model, tr)
        record(0, "train", train_loss, train_psnr)
        val_loss = val_psnr = None
        if va is not None:
            val_loss, val_psnr = evaluate(model, va)
            record(0, "val", val_loss, val_psnr)
        best_psnr = -math.inf
        t0 = time.perf_counter()
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = torch.randperm(len(tr), generator=gen)
            running, seen = 0.0, 0
            for step, start in enumerate(range(0, len(tr), config.batch_size)):
                idx = order[start : start + config.batch_size]
                gt, zf, k, m = tr.take(idx)
                opt.zero_grad(set_to_none=True)
                out = model(zf, k, m)
                batch_loss = loss(out, gt)
                if not torch.isfinite(batch_loss):
                    raise TrainingError(f"loss diverged at epoch {epoch}, step {step}")
                batch_loss.backward()
                opt.step()
                running += float(batch_loss.detach()) * len(idx)
                seen += len(idx)
            train_loss = running / seen
            record(epoch, "train", train_loss, None)
            if va is not None:
                val_loss, val_psnr = evaluate(model, va)
                record(epoch, "val", val_loss, val_psnr)
                if ckpt_dir and val_psnr > best_psnr:
                    best_psnr = val_psnr
                    CascadeCheckpoint.from_model(model, meta(epoch, train_loss, val_loss, val_psnr)).save(
                        ckpt_dir / "best.ckpt"
                    )
            log.info("epoch %d train_loss %.6g val_psnr %s (%.1fs)", epoch, train_loss, val_psnr, time.perf_counter() - t0)
    finally:
        if log_fh:
            log_fh.close()

    final_meta = meta(config.epochs, train_loss, val_loss, val_psnr)
    final_meta["history"] = history
    ckpt = CascadeCheckpoint.from_model(model, final_meta)
    if ckpt_dir:
        ckpt.save(ckpt_dir / "final.ckpt")
        if va is None:
            ckpt.save(ckpt_dir / "best.ckpt")
    return ckpt


def _as_model(checkpoint) -> tuple[CascadeNet, dict]:
    if isinstance(checkpoint, CascadeNet):
        return checkpoint, {}
    if not isinstance(checkpoint, CascadeCheckpoint):
        checkpoint = CascadeCheckpoint.load(checkpoint)
    model = checkpoint.build_model()
    return model, checkpoint.training_meta


def reconstruct_many(checkpoint, slices, masks, batch_size: int = 16) -> list[ComplexImage]:
    """Batched :func:`reconstruct`; ``masks`` is one mask or one per slice."""
    model, meta = _as_model(checkpoint)
    model.eval()
    if isinstance(masks, SamplingMask):
        masks = [masks] * len(slices)
    want = tuple(meta["image_shape"]) if meta.get("image_shape") else None
    out = []
    for start in range(0, len(slices), batch_size):
        chunk = slices[start : start + batch_size]
        mchunk = masks[start : start + batch_size]
        normed, scales = [], []
        for img, mask in zip(chunk, mchunk):
            if want is not None and img.shape != want:
                raise ValueError(f"slice shape {img.shape} does not match the training shape {want}")
            if img.shape != mask.shape:
                raise ValueError(f"slice shape {img.shape} does not match mask shape {mask.shape}")
            n, s = normalize_slice(img)
            normed.append(n)
            scales.append(s)
        data = prepare_with_masks(normed, mchunk)
        with torch.no_grad():
            rec = model(data.zf, data.kspace, data.mask)
        for j, s in enumerate(scales):
            out.append(denormalize_slice(tensor_to_image(rec[j : j + 1]), s))
    return out


def prepare_with_masks(slices, masks) -> Batchset:
    gts, zfs, ks, ms = [], [], [], []
    for img, mask in zip(slices, masks):
        k = fft2c_array(img.to_array()) * mask.sampled
        zf = ifft2c_array(k)
        gts.append(np.stack([img.real, img.imag]))
        zfs.append(np.stack([zf.real, zf.imag]).astype(np.float32))
        ks.append(k.astype(np.complex64))
        ms.append(mask.sampled)
    return Batchset(*(torch.from_numpy(np.stack(a)) for a in (gts, zfs, ks, ms)))


def reconstruct(checkpoint, slice: ComplexImage, mask: SamplingMask) -> ComplexImage:
    """Normalise, undersample with ``mask``, run the cascade, undo the normalisation."""
    return reconstruct_many(checkpoint, [slice], [mask])[0]
