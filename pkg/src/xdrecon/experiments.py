"""Workflow drivers shared by the CLI and the acceptance tests.

Each driver writes into its own directory and finishes with a
``manifest.json`` that lists every file it produced (path relative to the
directory, size and sha256) together with the hash of the effective config.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from . import config as cfgmod
from .data import DatasetError, load_dataset
from .kspace import derive_seed
from .metrics import (
    CrossDomainTable,
    cross_domain_table,
    evaluate_model,
    export_error_images,
    write_records_csv,
    zero_filled_records,
)
from .model import CascadeCheckpoint
from .patches import distance_table, extract_patches
from .train import TrainConfig, train

log = logging.getLogger(__name__)


class Manifest:
    def __init__(self, out_dir, command: str, doc: dict):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config_hash = cfgmod.config_hash(doc)
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        if path not in self.paths:
            self.paths.append(path)
        return path

    def write(self) -> Path:
        entries = []
        for p in sorted(self.paths, key=lambda q: str(q.relative_to(self.out_dir))):
            data = p.read_bytes()
            entries.append(
                {"path": str(p.relative_to(self.out_dir)), "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
            )
        doc = {"command": self.command, "config_hash": self.config_hash, "artifacts": entries}
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def _spec(specs, name, split):
    if name not in specs:
        raise DatasetError(f"unknown dataset id {name!r}; config defines {sorted(specs)}")
    return specs[name].with_split(split)


def train_one(doc: dict, dataset_id: str, out_dir, manifest: Manifest | None = None) -> CascadeCheckpoint:
    specs = cfgmod.dataset_specs(doc)
    spec = _spec(specs, dataset_id, "train")
    mask, policy = cfgmod.mask_args(doc)
    t = doc.get("train", {})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(
        dataset=spec,
        cascade=cfgmod.cascade_config(doc),
        mask=mask,
        mask_policy=policy,
        epochs=t.get("epochs", 10),
        batch_size=t.get("batch_size", 4),
        learning_rate=t.get("learning_rate", 1e-3),
        optimizer=t.get("optimizer", "adaptive-moment"),
        seed=t.get("seed", cfgmod.global_seed(doc)),
        checkpoint_dir=str(out_dir),
        log_path=str(out_dir / "train_log.jsonl"),
    )
    ckpt = train(tc)
    if manifest is not None:
        for name in ("best.ckpt", "final.ckpt", "train_log.jsonl"):
            if (out_dir / name).exists():
                manifest.add(out_dir / name)
    return ckpt


def run_train(doc: dict, out_dir, dataset_id: str | None = None) -> Path:
    dataset_id = dataset_id or doc.get("train", {}).get("dataset")
    if not dataset_id:
        raise cfgmod.ConfigError("no training dataset given (train.dataset or --dataset)")
    man = Manifest(out_dir, "train", doc)
    train_one(doc, dataset_id, Path(out_dir) / dataset_id, man)
    return man.write()


def run_xdomain(doc: dict, out_dir) -> dict:
    """Train (or load) one model per train domain and score it on every test domain.

    Writes ``records.csv``, ``baseline_records.csv`` (zero-filled),
    ``table.csv``, ``table.json``, ``table.md`` and the checkpoints.
    """
    out_dir = Path(out_dir)
    man = Manifest(out_dir, "xdomain", doc)
    specs = cfgmod.dataset_specs(doc)
    ev = doc.get("eval", {})
    train_domains = ev.get("train_domains") or list(specs)
    test_domains = ev.get("test_domains") or list(specs)
    split = ev.get("split", "test")
    given = ev.get("checkpoints", {})
    mask, policy = cfgmod.mask_args(doc)

    tests = {d: load_dataset(_spec(specs, d, split)) for d in test_domains}
    checkpoints = {}
    for d in train_domains:
        if d in given:
            path = Path(given[d])
            if not path.exists():
                raise FileNotFoundError(f"checkpoint not found: {path}")
            checkpoints[d] = CascadeCheckpoint.load(path)
        else:
            log.info("training on %s", d)
            checkpoints[d] = train_one(doc, d, out_dir / "checkpoints" / d, man)

    records, baseline = [], []
    for d in test_domains:
        baseline += zero_filled_records(tests[d], mask, d, policy)
    for tr in train_domains:
        for te in test_domains:
            records += evaluate_model(checkpoints[tr], tests[te], mask, tr, te, policy)

    table = cross_domain_table(records)
    man.add(out_dir / "records.csv")
    write_records_csv(records, out_dir / "records.csv")
    man.add(out_dir / "baseline_records.csv")
    write_records_csv(baseline, out_dir / "baseline_records.csv")
    table.to_csv(man.add(out_dir / "table.csv"))
    table.to_json(man.add(out_dir / "table.json"))
    (out_dir / "table.md").write_text(table.to_markdown())
    man.add(out_dir / "table.md")
    man.write()
    return {"records": records, "baseline": baseline, "table": table, "checkpoints": checkpoints}


def run_patchdist(doc: dict, out_dir) -> dict:
    out_dir = Path(out_dir)
    man = Manifest(out_dir, "patchdist", doc)
    specs = cfgmod.dataset_specs(doc)
    ps = doc.get("patch_stats", {})
    targets = ps.get("targets") or list(specs)
    sources = ps.get("sources") or list(specs)
    split = ps.get("split", "train")
    size = ps.get("patch_size", 7)
    norm = ps.get("patch_norm", "none")
    base_seed = ps.get("seed", cfgmod.global_seed(doc))
    counts = ps.get("n_patches", {})
    default_n = ps.get("default_n", 20000)

    cache = {}

    def patchset(name, role):
        if (name, role) not in cache:
            slices = load_dataset(_spec(specs, name, split))
            seed = derive_seed(base_seed, 0 if role == "target" else 1)
            cache[(name, role)] = extract_patches(slices, counts.get(name, default_n), size, seed, name, norm)
        return cache[(name, role)]

    # one seed per role: identical datasets give identical patch sets, and a
    # dataset used as both target and source is sampled independently
    tsets = [patchset(n, "target") for n in targets]
    ssets = [patchset(n, "source") for n in sources]
    table = distance_table(tsets, ssets, block_size=ps.get("block_size", 4096), test=ps.get("test", "wilcoxon"))
    table.to_csv(man.add(out_dir / "patch_table.csv"))
    table.to_json(man.add(out_dir / "patch_table.json"))
    (out_dir / "patch_table.md").write_text(table.to_markdown())
    man.add(out_dir / "patch_table.md")
    man.write()
    return {"table": table}


def run_report(doc: dict, root, out_dir) -> Path:
    """Bundle the tables found under ``root`` into ``report.md`` and export
    error images for the cross-domain checkpoints, if any."""
    root = Path(root)
    found = sorted(p for p in root.rglob("*.csv") if Path(out_dir) not in p.parents) if root.is_dir() else []
    if not found:
        raise FileNotFoundError(f"nothing to report in {root}")
    man = Manifest(out_dir, "report", doc)
    out_dir = Path(out_dir)
    lines = ["# Cross-domain reconstruction report", ""]
    xtable = root / "xdomain" / "table.csv"
    if xtable.exists():
        lines += ["## Reconstruction quality (mean ± std over test slices)", "", CrossDomainTable.read_csv(xtable).to_markdown()]
    ptable = root / "patchdist" / "patch_table.md"
    if ptable.exists():
        lines += ["## Mean nearest-neighbour patch distance (row minimum in bold)", "", ptable.read_text()]

    ev = doc.get("eval", {})
    n_img = ev.get("n_error_images", 2)
    ckpt_root = root / "xdomain" / "checkpoints"
    if n_img > 0 and ckpt_root.is_dir() and doc.get("datasets"):
        specs = cfgmod.dataset_specs(doc)
        mask, policy = cfgmod.mask_args(doc)
        test_domains = ev.get("test_domains") or list(specs)
        lines += ["## Error images", ""]
        for ck in sorted(ckpt_root.glob("*/final.ckpt")):
            tr = ck.parent.name
            for te in test_domains:
                slices = load_dataset(_spec(specs, te, ev.get("split", "test")))[:n_img]
                paths = export_error_images(ck, slices, mask, out_dir / "images", ev.get("error_gain", 5.0),
                                            prefix=f"{tr}_on_{te}", policy=policy)
                for p in paths:
                    man.add(p)
                lines.append(f"- {tr} -> {te}: " + ", ".join(p.name for p in paths))
        lines.append("")
    lines += ["## Source files", ""] + [f"- {p.relative_to(root)}" for p in found] + [""]
    (out_dir / "report.md").write_text("\n".join(lines))
    man.add(out_dir / "report.md")
    return man.write()
