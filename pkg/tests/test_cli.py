import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from xdrecon import io
from xdrecon.cli import main

TINY_DOC = {
    "datasets": [
        {"id": "ell", "kind": "phantom", "phantom_family": "ellipses", "count": 10, "seed": 1, "target_shape": [32, 32]},
        {"id": "rect", "kind": "phantom", "phantom_family": "rectangles", "count": 10, "seed": 2,
         "target_shape": [32, 32]},
    ],
    "mask": {"acceleration": 4, "center_fraction": 0.1, "seed": 3},
    "cascade": {"n_cascades": 1, "n_conv_per_block": 2, "n_filters": 4, "kernel_size": 3},
    "train": {"epochs": 1, "batch_size": 4, "learning_rate": 0.001, "seed": 0},
    "eval": {"n_error_images": 1},
    "patch_stats": {"default_n": 200, "seed": 5},
    "global_seed": 0,
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(TINY_DOC))
    return p


def _manifest_ok(d):
    man = json.loads((d / "manifest.json").read_text())
    listed = {a["path"] for a in man["artifacts"]}
    on_disk = {str(p.relative_to(d)) for p in d.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert listed == on_disk
    for a in man["artifacts"]:
        data = (d / a["path"]).read_bytes()
        assert a["bytes"] == len(data) and a["sha256"] == hashlib.sha256(data).hexdigest()
    return man


def test_mask_command(tmp_path, capsys):
    out = tmp_path / "m.cimg"
    assert main(["mask", "--height", "256", "--width", "256", "--accel", "4", "--seed", "7", "--out", str(out)]) == 0
    m = io.load_mask(out)
    assert m.sampled.any(axis=0).sum() == 64
    assert "64 sampled lines" in capsys.readouterr().out
    first = out.read_bytes()
    main(["mask", "--height", "256", "--width", "256", "--accel", "4", "--seed", "7", "--out", str(out)])
    assert out.read_bytes() == first


def test_mask_invalid_accel(tmp_path, capsys):
    rc = main(["mask", "--height", "64", "--width", "64", "--accel", "0.5", "--out", str(tmp_path / "m.cimg")])
    assert rc == 2
    assert "acceleration" in capsys.readouterr().err
    assert not (tmp_path / "m.cimg").exists()


def test_synth_command(tmp_path):
    src = tmp_path / "imgs"
    src.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        Image.fromarray(rng.integers(0, 256, (40, 60, 3), dtype=np.uint8)).save(src / f"im{i}.png")
    args = ["synth", "--input", str(src), "--out", str(tmp_path / "o1"), "--size", "32", "32"]
    assert main(args) == 0
    outs = sorted((tmp_path / "o1").glob("*.cimg"))
    assert len(outs) == 3
    main(args[:4] + [str(tmp_path / "o2")] + args[5:])
    assert [p.read_bytes() for p in outs] == [p.read_bytes() for p in sorted((tmp_path / "o2").glob("*.cimg"))]
    (src / "zz.jpg").write_bytes(b"garbage")
    assert main(args[:4] + [str(tmp_path / "o3")] + args[5:]) == 0
    rep = json.loads((tmp_path / "o3" / "load_report.json").read_text())
    assert rep["scanned"] == 4 and rep["decoded"] == 3 and len(rep["skipped"]) == 1
    _manifest_ok(tmp_path / "o3")


def test_synth_empty_input(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["synth", "--input", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1


def test_phantoms_command(tmp_path):
    out = tmp_path / "ph"
    assert main(["phantoms", "--family", "rectangles", "--count", "10", "--size", "32", "32", "--out", str(out)]) == 0
    assert len(list((out / "train").glob("*.cimg"))) == 8
    _manifest_ok(out)


def test_train_recon_eval(tmp_path, config):
    root = tmp_path / "out"
    assert main(["train", "--config", str(config), "--dataset", "ell", "--output-dir", str(root)]) == 0
    ckpt = root / "train" / "ell" / "final.ckpt"
    assert ckpt.exists()
    _manifest_ok(root / "train")

    main(["phantoms", "--family", "ellipses", "--count", "10", "--size", "32", "32", "--out", str(tmp_path / "ph")])
    main(["mask", "--height", "32", "--width", "32", "--seed", "1", "--out", str(tmp_path / "m.cimg")])
    slice_path = sorted((tmp_path / "ph" / "test").glob("*.cimg"))[0]
    rc = main(["recon", "--checkpoint", str(ckpt), "--input", str(slice_path), "--mask", str(tmp_path / "m.cimg"),
               "--out", str(tmp_path / "r.cimg")])
    assert rc == 0 and io.load_image(tmp_path / "r.cimg").shape == (32, 32)

    assert main(["eval", "--config", str(config), "--checkpoint", str(ckpt), "--output-dir", str(root)]) == 0
    lines = (root / "eval" / "records.csv").read_text().splitlines()
    assert lines[0] == "train_domain,test_domain,slice_id,psnr,ssim" and len(lines) == 3
    _manifest_ok(root / "eval")


def test_missing_checkpoint_names_path(tmp_path, config, capsys):
    rc = main(["eval", "--config", str(config), "--checkpoint", str(tmp_path / "nope.ckpt"),
               "--output-dir", str(tmp_path)])
    assert rc == 1
    assert "nope.ckpt" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"mask": {"acceleration": 4, "bogus": 1}}))
    assert main(["xdomain", "--config", str(p)]) == 2
    assert "bogus" in capsys.readouterr().err
    p.write_text("{not json")
    assert main(["patchdist", "--config", str(p)]) == 2


def test_xdomain_report(tmp_path, config):
    root = tmp_path / "out"
    assert main(["xdomain", "--config", str(config), "--output-dir", str(root)]) == 0
    table = (root / "xdomain" / "table.csv").read_text().splitlines()
    assert len(table) == 3
    _manifest_ok(root / "xdomain")
    assert main(["report", "--config", str(config), "--output-dir", str(root)]) == 0
    report = (root / "report" / "report.md").read_text()
    assert "Reconstruction quality" in report
    assert len(list((root / "report" / "images").glob("*.png"))) == 2 * 2 * 3
    _manifest_ok(root / "report")


def test_patchdist_identical_sources(tmp_path):
    doc = dict(TINY_DOC)
    doc["datasets"] = TINY_DOC["datasets"] + [dict(TINY_DOC["datasets"][0], id="ell2")]
    doc["patch_stats"] = {"default_n": 300, "targets": ["rect"], "sources": ["ell", "ell2"], "seed": 1}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["patchdist", "--config", str(p), "--output-dir", str(tmp_path)]) == 0
    _manifest_ok(tmp_path / "patchdist")
    tab = json.loads((tmp_path / "patchdist" / "patch_table.json").read_text())
    a, b = tab["cells"]
    assert (a["source"], b["source"]) == ("ell", "ell2")
    assert (a["mean"], a["std"]) == (b["mean"], b["std"])
    assert tab["p_values"]["rect"] == 1.0


def test_report_nothing(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    rc = main(["report", "--output-dir", str(tmp_path / "empty")])
    assert rc != 0
    assert "nothing to report" in capsys.readouterr().err


def test_env_output_dir(tmp_path, config, monkeypatch):
    monkeypatch.setenv("XDR_OUTPUT_DIR", str(tmp_path / "envout"))
    assert main(["patchdist", "--config", str(config)]) == 0
    assert (tmp_path / "envout" / "patchdist" / "patch_table.csv").exists()


def test_console_entry_point_subprocess(tmp_path):
    out = tmp_path / "m.cimg"
    res = subprocess.run([sys.executable, "-m", "xdrecon.cli", "mask", "--height", "32", "--width", "32", "--out",
                          str(out)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert out.exists()
