import json

import numpy as np
import pytest
import torch

from conftest import random_image
from xdrecon.data import DatasetSpec, generate_phantoms, normalize_slice
from xdrecon.kspace import generate_mask, undersample
from xdrecon.model import CascadeCheckpoint, CascadeConfig, init_model, loss
from xdrecon.train import MaskArgs, TrainConfig, TrainingError, evaluate, prepare, reconstruct, reconstruct_many, train

TINY = CascadeConfig(n_cascades=1, n_conv_per_block=2, n_filters=4, kernel_size=3)
SPEC = DatasetSpec("e", "phantom", phantom_family="ellipses", count=20, seed=3, target_shape=(32, 32))


def _cfg(tmp_path=None, **kw):
    base = dict(dataset=SPEC, cascade=TINY, mask=MaskArgs(4.0, 0.1, 0.25, "lines-1d", 5), epochs=2, batch_size=4,
                learning_rate=1e-3, seed=11)
    if tmp_path is not None:
        base.update(checkpoint_dir=str(tmp_path), log_path=str(tmp_path / "log.jsonl"))
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    for kw in [dict(epochs=0), dict(batch_size=0), dict(learning_rate=-1.0), dict(optimizer="lbfgs"),
               dict(mask_policy="random")]:
        with pytest.raises(ValueError):
            _cfg(**kw)


def test_zero_learning_rate_keeps_parameters(tmp_path):
    ck = train(_cfg(learning_rate=0.0, optimizer="sgd-momentum"))
    ref = CascadeCheckpoint.from_model(init_model(TINY, 11), {})
    assert ck.parameters == ref.parameters


def test_training_is_deterministic():
    a = train(_cfg())
    b = train(_cfg())
    assert a.to_bytes() == b.to_bytes()
    assert train(_cfg(seed=12)).parameters != a.parameters


def test_epoch_zero_loss_is_zero_filled_loss(tmp_path):
    ck = train(_cfg(tmp_path))
    rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    first = rows[0]
    assert first["epoch"] == 0 and first["split"] == "train"
    slices = generate_phantoms(SPEC)[:16]
    mask = ck.training_meta["mask"]
    ma = MaskArgs(**mask)
    expected = np.mean([loss(undersample(normalize_slice(s)[0], ma.make(s.shape, i))[1], normalize_slice(s)[0])
                        for i, s in enumerate(slices)])
    assert first["loss"] == pytest.approx(expected, abs=1e-4)
    assert {r["epoch"] for r in rows} == {0, 1, 2}
    assert {"epoch", "split", "loss", "psnr"} == set(rows[-1])
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "final.ckpt").exists()


def test_training_reduces_loss():
    ck = train(_cfg(epochs=4, learning_rate=3e-3))
    hist = [r for r in ck.training_meta["history"] if r["split"] == "train"]
    assert hist[-1]["loss"] < hist[0]["loss"]


def test_reload_reproduces_val_loss(tmp_path):
    ck = train(_cfg(tmp_path))
    loaded = CascadeCheckpoint.load(tmp_path / "final.ckpt")
    val = generate_phantoms(SPEC)[16:18]
    data = prepare(val, MaskArgs(**loaded.training_meta["mask"]), "per-sample", index_offset=16)
    val_loss, _ = evaluate(loaded.build_model(), data)
    assert val_loss == pytest.approx(ck.training_meta["val_loss"], abs=1e-5)


def test_nan_loss_raises(rng):
    slices = [random_image(rng, 32, 32) for _ in range(4)]
    cfg = _cfg(learning_rate=1e30, optimizer="sgd-momentum", epochs=5)
    with pytest.raises(TrainingError, match="epoch"):
        with np.errstate(all="ignore"):
            train(cfg, slices, [])


def test_reconstruct_zero_init_equals_zero_filled(rng):
    model = init_model(TINY, 0)
    img = random_image(rng, 32, 32, 2.0)
    mask = generate_mask(32, 32, 4.0, 0.1, seed=1)
    rec = reconstruct(model, img, mask)
    n, scale = normalize_slice(img)
    zf = undersample(n, mask)[1]
    np.testing.assert_allclose(rec.to_array(), zf.to_array() * scale, atol=1e-5 * scale)


def test_reconstruct_full_mask_returns_input(rng):
    ck = train(_cfg(epochs=1))
    img = normalize_slice(random_image(rng, 32, 32))[0]
    rec = reconstruct(ck, img, generate_mask(32, 32, 1.0, 1.0, seed=0))
    assert np.abs(rec.to_array() - img.to_array()).max() <= 1e-4


def test_reconstruct_shape_mismatch(rng):
    ck = train(_cfg(epochs=1))
    img = random_image(rng, 48, 48)
    with pytest.raises(ValueError, match="training shape"):
        reconstruct(ck, img, generate_mask(48, 48, 4.0, 0.1, seed=0))


def test_reconstruct_many_matches_single(rng):
    ck = train(_cfg(epochs=1))
    imgs = [random_image(rng, 32, 32) for _ in range(3)]
    masks = [generate_mask(32, 32, 4.0, 0.1, seed=i) for i in range(3)]
    many = reconstruct_many(ck, imgs, masks, batch_size=2)
    for img, m, got in zip(imgs, masks, many):
        np.testing.assert_allclose(got.to_array(), reconstruct(ck, img, m).to_array(), atol=1e-6)


def test_fixed_mask_policy_uses_one_mask():
    slices = generate_phantoms(SPEC)[:4]
    data = prepare(slices, MaskArgs(seed=2), "fixed")
    assert all(torch.equal(data.mask[0], data.mask[i]) for i in range(4))
    data = prepare(slices, MaskArgs(seed=2), "per-sample")
    assert not torch.equal(data.mask[0], data.mask[1])
