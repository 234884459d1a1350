"""Image quality metrics, cross-domain result tables and error-image export.

All metrics compare magnitude images. PSNR uses the ground-truth maximum as
peak; SSIM uses an 11x11 Gaussian window (sigma 1.5) over valid positions with
K1 = 0.01, K2 = 0.03 and dynamic range equal to the ground-truth maximum.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .kspace import ComplexImage

SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _check_pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref_mag, test_mag) -> float:
    """PSNR in dB with peak ``max(ref_mag)``; ``inf`` for identical images."""
    ref, test = _check_pair(ref_mag, test_mag)
    peak = ref.max()
    if not peak > 0:
        raise ValueError("reference image has no positive peak")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    x = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(x, g.size, axis=1) @ g


def _ssim_terms(mu_x, mu_y, xx, yy, xy, c1, c2):
    vx = xx - mu_x * mu_x
    vy = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (vx + vy + c2)
    return num / den


def ssim(ref_mag, test_mag) -> float:
    """Mean structural similarity over all valid 11x11 windows."""
    ref, test = _check_pair(ref_mag, test_mag)
    if ref.ndim != 2 or min(ref.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs a 2D image of at least {SSIM_WIN}x{SSIM_WIN}, got {ref.shape}")
    rng = ref.max()
    if not rng > 0:
        raise ValueError("reference image has no positive dynamic range")
    c1, c2 = (K1 * rng) ** 2, (K2 * rng) ** 2
    g = gaussian_window()
    mu_x, mu_y = _filter_valid(ref, g), _filter_valid(test, g)
    xx, yy, xy = _filter_valid(ref * ref, g), _filter_valid(test * test, g), _filter_valid(ref * test, g)
    return float(np.mean(_ssim_terms(mu_x, mu_y, xx, yy, xy, c1, c2)))


@dataclass(frozen=True)
class EvalRecord:
    train_domain: str
    test_domain: str
    slice_id: str
    psnr: float
    ssim: float


RECORD_FIELDS = ("train_domain", "test_domain", "slice_id", "psnr", "ssim")


def fmt_float(v: float) -> str:
    if math.isinf(v) and v > 0:
        return "inf"
    return repr(float(v))


def parse_float(s: str) -> float:
    return math.inf if s == "inf" else float(s)


def _json_float(v):
    if v is None:
        return None
    return "inf" if math.isinf(v) and v > 0 else float(v)


def score_slices(ground_truth, reconstructions, train_domain, test_domain, ids=None) -> list[EvalRecord]:
    records = []
    for i, (gt, rec) in enumerate(zip(ground_truth, reconstructions)):
        gm, rm = gt.magnitude(), rec.magnitude()
        sid = ids[i] if ids is not None else f"{test_domain}-{i:04d}"
        records.append(EvalRecord(train_domain, test_domain, sid, psnr(gm, rm), ssim(gm, rm)))
    return records


def evaluate_model(checkpoint, test_slices, mask_args, train_domain: str = "model", test_domain: str = "test",
                   policy: str = "per-sample") -> list[EvalRecord]:
    """Reconstruct every test slice and score it against its own magnitude.

    ``test_slices`` is a list of :class:`ComplexImage` or a ``DatasetSpec``
    (its split is loaded). Slice ``i`` uses ``mask_args.make(shape, i)``, or
    the single fixed mask when ``policy="fixed"``.
    """
    from .data import DatasetSpec, load_dataset
    from .train import reconstruct_many

    if isinstance(test_slices, DatasetSpec):
        test_slices = load_dataset(test_slices)
    if policy == "fixed":
        masks = [mask_args.make(s.shape) for s in test_slices]
    else:
        masks = [mask_args.make(s.shape, i) for i, s in enumerate(test_slices)]
    recs = reconstruct_many(checkpoint, test_slices, masks)
    return score_slices(test_slices, recs, train_domain, test_domain)


def zero_filled_records(test_slices, mask_args, test_domain: str, policy: str = "per-sample") -> list[EvalRecord]:
    """Baseline records for the zero-filled reconstruction."""
    from .data import normalize_slice
    from .kspace import undersample

    recs = []
    for i, s in enumerate(test_slices):
        mask = mask_args.make(s.shape) if policy == "fixed" else mask_args.make(s.shape, i)
        n, scale = normalize_slice(s)
        zf = undersample(n, mask)[1]
        recs.append(ComplexImage(zf.real * scale, zf.imag * scale))
    return score_slices(test_slices, recs, "zero-filled", test_domain)


def write_records_csv(records, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([r.train_domain, r.test_domain, r.slice_id, fmt_float(r.psnr), fmt_float(r.ssim)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_records_csv(path) -> list[EvalRecord]:
    return parse_records_csv(Path(path).read_text())


def parse_records_csv(text: str) -> list[EvalRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        EvalRecord(r["train_domain"], r["test_domain"], r["slice_id"], parse_float(r["psnr"]), parse_float(r["ssim"]))
        for r in rows
    ]


def mean_std(values) -> tuple[float, float]:
    """Mean and population std; infinite PSNR sentinels propagate to the mean."""
    v = np.asarray(values, dtype=np.float64)
    if np.isinf(v).any():
        return math.inf, (0.0 if np.isinf(v).all() else math.inf)
    return float(v.mean()), float(v.std())


@dataclass
class Cell:
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    n: int


@dataclass
class CrossDomainTable:
    rows: list
    cols: list
    cells: dict  # (train, test) -> Cell

    def cell(self, train: str, test: str) -> Cell:
        return self.cells[(train, test)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["train_domain"]
        for c in self.cols:
            header += [f"{c}_psnr_mean", f"{c}_psnr_std", f"{c}_ssim_mean", f"{c}_ssim_std", f"{c}_n"]
        w.writerow(header)
        for r in self.rows:
            row = [r]
            for c in self.cols:
                cell = self.cells[(r, c)]
                row += [fmt_float(cell.psnr_mean), fmt_float(cell.psnr_std), fmt_float(cell.ssim_mean),
                        fmt_float(cell.ssim_std), str(cell.n)]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "CrossDomainTable":
        return cls.from_csv(Path(path).read_text())

    @classmethod
    def from_csv(cls, text: str) -> "CrossDomainTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        cols = [h[: -len("_psnr_mean")] for h in header[1:] if h.endswith("_psnr_mean")]
        rows, cells = [], {}
        for line in reader:
            r = line[0]
            rows.append(r)
            for j, c in enumerate(cols):
                vals = line[1 + 5 * j : 6 + 5 * j]
                cells[(r, c)] = Cell(*(parse_float(v) for v in vals[:4]), int(vals[4]))
        return cls(rows, cols, cells)

    def to_json(self, path=None, highlight_matched: bool = True) -> str:
        doc = {
            "rows": self.rows,
            "cols": self.cols,
            "cells": [
                {
                    "train_domain": r,
                    "test_domain": c,
                    **{k: (_json_float(v) if k != "n" else v) for k, v in asdict(self.cells[(r, c)]).items()},
                    "matched": highlight_matched and r == c,
                }
                for r in self.rows
                for c in self.cols
            ],
        }
        text = json.dumps(doc, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_markdown(self, highlight_matched: bool = True) -> str:
        lines = ["| Train | Metric | " + " | ".join(self.cols) + " |", "|---|---|" + "---|" * len(self.cols)]
        for r in self.rows:
            for metric, fmt in (("psnr", "{:.2f}"), ("ssim", "{:.3f}")):
                vals = []
                for c in self.cols:
                    cell = self.cells[(r, c)]
                    m, s = getattr(cell, f"{metric}_mean"), getattr(cell, f"{metric}_std")
                    txt = f"{fmt.format(m)}±{fmt.format(s)}"
                    vals.append(f"**{txt}**" if highlight_matched and r == c else txt)
                lines.append(f"| {r if metric == 'psnr' else ''} | {metric.upper()} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"


def cross_domain_table(records) -> CrossDomainTable:
    """Aggregate per-slice records into a train x test grid (mean ± population std)."""
    rows, cols, groups = [], [], {}
    for r in records:
        if r.train_domain not in rows:
            rows.append(r.train_domain)
        if r.test_domain not in cols:
            cols.append(r.test_domain)
        groups.setdefault((r.train_domain, r.test_domain), []).append(r)
    missing = [(a, b) for a in rows for b in cols if (a, b) not in groups]
    if missing:
        raise ValueError("records do not cover the grid; missing " + ", ".join(f"{a}->{b}" for a, b in missing))
    cells = {}
    for key, recs in groups.items():
        pm, ps = mean_std([r.psnr for r in recs])
        sm, ss = mean_std([r.ssim for r in recs])
        cells[key] = Cell(pm, ps, sm, ss, len(recs))
    return CrossDomainTable(rows, cols, cells)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img01: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img01), mode="L").save(path, format="PNG")


def error_image_arrays(gt: ComplexImage, rec: ComplexImage, error_gain: float):
    """Ground truth, reconstruction and amplified |error| magnitudes on the
    ground-truth peak scale, unclipped."""
    gm, rm = gt.magnitude(), rec.magnitude()
    peak = gm.max() if gm.max() > 0 else 1.0
    return gm / peak, rm / peak, error_gain * np.abs(rm - gm) / peak


def export_error_images(checkpoint, slices, mask_args, out_dir, error_gain: float = 5.0,
                        prefix: str = "slice", policy: str = "per-sample") -> list[Path]:
    """Write ``<prefix>_<i>_{gt,recon,error}.png`` for every slice."""
    from .train import reconstruct_many

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    if policy == "fixed":
        masks = [mask_args.make(s.shape) for s in slices]
    else:
        masks = [mask_args.make(s.shape, i) for i, s in enumerate(slices)]
    recs = reconstruct_many(checkpoint, list(slices), masks)
    paths = []
    for i, (gt, rec) in enumerate(zip(slices, recs)):
        for name, arr in zip(("gt", "recon", "error"), error_image_arrays(gt, rec, error_gain)):
            p = out_dir / f"{prefix}_{i:04d}_{name}.png"
            write_png(p, arr)
            paths.append(p)
    return paths
