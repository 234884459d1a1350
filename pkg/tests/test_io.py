import json

import numpy as np
import pytest

from conftest import random_image
from xdrecon import io
from xdrecon.kspace import generate_mask
from xdrecon.patches import PatchSet


def test_image_container_layout(tmp_path, rng):
    img = random_image(rng, 3, 5)
    p = tmp_path / "a.cimg"
    io.save_image(p, img)
    raw = p.read_bytes()
    assert raw[:5] == b"CIMG1"
    nl = raw.index(b"\n")
    assert raw[5:nl] == b'{"height":3,"width":5,"dtype":"f32"}'
    body = raw[nl + 1 :]
    assert len(body) == 2 * 15 * 4
    np.testing.assert_array_equal(np.frombuffer(body[:60], "<f4").reshape(3, 5), img.real)
    np.testing.assert_array_equal(np.frombuffer(body[60:], "<f4").reshape(3, 5), img.imag)
    assert io.load_image(p) == img


def test_mask_container(tmp_path):
    m = generate_mask(32, 40, 4.0, 0.1, 0.3, "lines-1d", seed=11)
    p = tmp_path / "m.cimg"
    io.save_mask(p, m)
    raw = p.read_bytes()
    head = json.loads(raw[5 : raw.index(b"\n")])
    assert head["dtype"] == "u8" and head["seed"] == 11 and head["mode"] == "lines-1d"
    assert head["acceleration"] == 4.0 and head["center_fraction"] == 0.1 and head["sigma"] == 0.3
    assert len(raw) - raw.index(b"\n") - 1 == 32 * 40
    assert io.load_mask(p) == m


def test_patch_container(tmp_path, rng):
    ps = PatchSet(rng.random((20, 49)), 7, "cardiac", 5)
    p = tmp_path / "p.cimg"
    io.save_patches(p, ps)
    assert io.load_patches(p) == ps


@pytest.mark.parametrize(
    "payload,msg",
    [
        (b"CIMGX{}\n", "bad magic"),
        (b"CIMG1{\"height\":2}\n", "missing"),
        (b"CIMG1{\"height\":2,\"width\":2,\"dtype\":\"f32\"}\n" + b"\0" * 8, "payload"),
        (b"CIMG1not json\n", "malformed"),
    ],
)
def test_malformed_containers(tmp_path, payload, msg):
    p = tmp_path / "bad.cimg"
    p.write_bytes(payload)
    with pytest.raises(io.ContainerError, match=msg) as info:
        io.load_image(p)
    assert "bad.cimg" in str(info.value)
