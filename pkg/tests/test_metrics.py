import math

import numpy as np
import pytest
from PIL import Image

from conftest import random_image
from phantoms import shepp_logan
from xdrecon.kspace import ComplexImage
from xdrecon.metrics import (
    CrossDomainTable,
    EvalRecord,
    cross_domain_table,
    error_image_arrays,
    export_error_images,
    gaussian_window,
    parse_records_csv,
    psnr,
    read_records_csv,
    ssim,
    to_uint8,
    write_records_csv,
)
from xdrecon.model import CascadeConfig, init_model
from xdrecon.train import MaskArgs


def naive_ssim(x, y, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Per-window SSIM with explicit weighted sums, no separable filtering."""
    g = gaussian_window(win, sigma)
    w = np.outer(g, g)
    L = x.max()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a, b = x[i : i + win, j : j + win], y[i : i + win, j : j + win]
            mx, my = (w * a).sum(), (w * b).sum()
            vx = (w * (a - mx) ** 2).sum()
            vy = (w * (b - my) ** 2).sum()
            cxy = (w * (a - mx) * (b - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_psnr_identical_is_inf(rng):
    x = rng.random((16, 16))
    assert psnr(x, x) == math.inf


def test_psnr_offset_is_20db():
    x = shepp_logan(64)
    assert x.max() == 1.0
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-6)


def test_psnr_errors(rng):
    with pytest.raises(ValueError):
        psnr(rng.random((4, 4)), rng.random((4, 5)))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.ones((4, 4)))


def test_ssim_identical_is_exactly_one(rng):
    for x in (shepp_logan(64), rng.random((40, 33))):
        assert ssim(x, x) == 1.0


def test_ssim_of_inverted_image_below_one():
    x = shepp_logan(64)
    assert ssim(x, 1.0 - x) < 1.0


def test_ssim_matches_naive_oracle(rng):
    x = shepp_logan(64)
    y = np.clip(x + 0.05 * rng.standard_normal(x.shape), 0, None)
    assert abs(ssim(x, y) - naive_ssim(x, y)) <= 1e-6


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.ones((8, 8)), np.ones((8, 8)))


def test_ssim_symmetric_under_range(rng):
    x = rng.random((32, 32))
    y = x + 0.1 * rng.random((32, 32))
    assert -1.0 <= ssim(x, y) <= 1.0


def _records(rows, cols, per=3, seed=0):
    r = np.random.default_rng(seed)
    return [EvalRecord(a, b, f"{b}-{i}", float(r.uniform(20, 40)), float(r.uniform(0.5, 1)))
            for a in rows for b in cols for i in range(per)]


def test_table_single_record_zero_std():
    t = cross_domain_table([EvalRecord("a", "b", "s0", 31.5, 0.9)])
    c = t.cell("a", "b")
    assert (c.psnr_mean, c.psnr_std, c.ssim_std, c.n) == (31.5, 0.0, 0.0, 1)


def test_table_layout_4x3():
    rows, cols = ["cine", "knee-cpd", "knee-at2", "natural"], ["cine", "knee-cpd", "knee-at2"]
    t = cross_domain_table(_records(rows, cols))
    assert t.rows == rows and t.cols == cols
    assert len(t.to_csv().strip().splitlines()) == 5
    md = t.to_markdown()
    assert md.count("**") == 2 * 2 * 3  # diagonal cells, both metrics


def test_table_aggregation_matches_numpy():
    recs = _records(["a", "b"], ["x", "y"], per=7, seed=3)
    t = cross_domain_table(recs)
    for (r, c), cell in t.cells.items():
        v = np.array([x.psnr for x in recs if (x.train_domain, x.test_domain) == (r, c)])
        s = np.array([x.ssim for x in recs if (x.train_domain, x.test_domain) == (r, c)])
        assert abs(cell.psnr_mean - v.mean()) <= 1e-9 and abs(cell.psnr_std - v.std()) <= 1e-9
        assert abs(cell.ssim_mean - s.mean()) <= 1e-9 and cell.n == 7


def test_table_missing_cell():
    recs = _records(["a", "b"], ["x", "y"])
    recs = [r for r in recs if (r.train_domain, r.test_domain) != ("b", "y")]
    with pytest.raises(ValueError, match="b->y"):
        cross_domain_table(recs)


def test_table_csv_round_trip(tmp_path):
    recs = _records(["a", "b"], ["x"], per=2) + [EvalRecord("c", "x", "x-0", math.inf, 1.0)]
    t = cross_domain_table(recs)
    t.to_csv(tmp_path / "t.csv")
    back = CrossDomainTable.read_csv(tmp_path / "t.csv")
    assert back == t
    assert CrossDomainTable.from_csv(t.to_csv()) == t
    assert back.cell("c", "x").psnr_mean == math.inf


def test_records_csv_round_trip(tmp_path):
    recs = _records(["a"], ["x", "y"]) + [EvalRecord("a", "z", "z-0", math.inf, 1.0)]
    write_records_csv(recs, tmp_path / "r.csv")
    assert read_records_csv(tmp_path / "r.csv") == recs
    text = write_records_csv(recs)
    assert text.splitlines()[0] == "train_domain,test_domain,slice_id,psnr,ssim"
    assert parse_records_csv(text) == recs


def test_table_json_flags_matched():
    import json

    t = cross_domain_table(_records(["x", "y"], ["x", "y"]))
    doc = json.loads(t.to_json())
    assert [c["matched"] for c in doc["cells"]] == [True, False, False, True]


def test_error_image_perfect_is_black(rng):
    gt = random_image(rng, 32, 32)
    _, _, err = error_image_arrays(gt, gt, 10.0)
    assert to_uint8(err).max() == 0


def test_error_gain_monotone(rng):
    gt = random_image(rng, 32, 32)
    rec = ComplexImage(gt.real * 0.97, gt.imag)
    lo = to_uint8(error_image_arrays(gt, rec, 2.0)[2]).astype(int)
    hi = to_uint8(error_image_arrays(gt, rec, 8.0)[2]).astype(int)
    assert (hi >= lo).all() and hi.sum() > lo.sum()


def test_export_error_images(tmp_path, rng):
    model = init_model(CascadeConfig(1, 2, 4, 3), 0)
    slices = [random_image(rng, 32, 32) for _ in range(3)]
    paths = export_error_images(model, slices, MaskArgs(4.0, 0.1, seed=1), tmp_path, 5.0, prefix="m_on_d")
    assert len(paths) == 9 and all(p.exists() for p in paths)
    assert paths[0].name == "m_on_d_0000_gt.png"
    with Image.open(paths[2]) as im:
        assert im.size == (32, 32) and im.mode == "L"
    full = export_error_images(model, slices[:1], MaskArgs(1.0, 1.0, seed=1), tmp_path / "full", 5.0)
    with Image.open(full[2]) as im:
        assert np.asarray(im).max() == 0


def test_evaluate_model_full_mask_is_inf(rng):
    from xdrecon.metrics import evaluate_model

    model = init_model(CascadeConfig(1, 2, 4, 3), 0, zero_last=False)
    slices = [random_image(rng, 32, 32) for _ in range(2)]
    recs = evaluate_model(model, slices, MaskArgs(1.0, 1.0), "m", "d")
    # hard DC with every sample measured reproduces the input up to float32 FFT rounding
    assert all(r.psnr > 100 or r.psnr == math.inf for r in recs)
    assert all(r.ssim == pytest.approx(1.0, abs=1e-9) for r in recs)


def test_evaluate_model_zero_init_equals_baseline(rng):
    from xdrecon.metrics import evaluate_model, zero_filled_records

    model = init_model(CascadeConfig(2, 2, 4, 3), 0)
    slices = [random_image(rng, 32, 32) for _ in range(3)]
    ma = MaskArgs(4.0, 0.1, seed=2)
    got = evaluate_model(model, slices, ma, "zero-filled", "d")
    want = zero_filled_records(slices, ma, "d")
    for g, w in zip(got, want):
        assert g.slice_id == w.slice_id
        assert g.psnr == pytest.approx(w.psnr, abs=1e-3) and g.ssim == pytest.approx(w.ssim, abs=1e-5)


def test_error_gain_one_vs_five(rng):
    gt = random_image(rng, 32, 32)
    rec = ComplexImage(gt.real + 0.05, gt.imag)
    one = to_uint8(error_image_arrays(gt, rec, 1.0)[2])
    five = to_uint8(error_image_arrays(gt, rec, 5.0)[2])
    assert (five >= one).all()
