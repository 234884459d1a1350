"""``xdr`` command line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiments, io
from .data import DatasetError, DatasetSpec, LoadReport, export_dataset, load_natural_dataset
from .kspace import ConfigError, generate_mask
from .phase import PhaseParams

log = logging.getLogger("xdrecon")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _output_root(args, doc) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if doc.get("output_dir"):
        return Path(doc["output_dir"])
    return Path(os.environ.get("XDR_OUTPUT_DIR", "xdr_out"))


def _load_config(args) -> dict:
    doc = cfgmod.load(args.config) if getattr(args, "config", None) else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["global_seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["train"] = {"epochs": args.epochs}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = str(args.output_dir)
    doc = cfgmod.deep_merge(doc, overrides)
    return cfgmod.validate(doc)


def cmd_mask(args) -> int:
    mask = generate_mask(args.height, args.width, args.accel, args.center_frac, args.sigma, args.mode, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_mask(out, mask)
    n = int(mask.sampled[0].sum()) if mask.mode == "lines-1d" else int(mask.sampled.sum())
    unit = "lines" if mask.mode == "lines-1d" else "points"
    print(f"wrote {out}: {n} sampled {unit}, fraction {mask.fraction:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    src = Path(args.input)
    if not src.is_dir() or not any(src.iterdir()):
        raise DatasetError(f"input directory {src} is missing or empty")
    spec = DatasetSpec(
        id=src.name or "natural",
        kind="natural-images",
        root=str(src),
        target_shape=tuple(args.size),
        split_fractions=(1.0, 0.0, 0.0),
        phase_params=PhaseParams(args.phase_sigma, args.phase_range, args.seed),
    )
    report = LoadReport()
    slices = load_natural_dataset(spec, workers=args.threads, report=report)
    out = Path(args.out)
    man = experiments.Manifest(out, "synth", spec.to_dict())
    if slices:
        for p in export_dataset(slices, out, prefix="slice"):
            man.add(p)
    (out / "load_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    man.add(out / "load_report.json")
    man.write()
    print(f"decoded {report.decoded} of {report.scanned} images into {out} ({len(report.skipped)} skipped)")
    if not slices:
        raise DatasetError(f"no decodable images in {src}")
    return EXIT_OK


def cmd_phantoms(args) -> int:
    from .data import generate_phantoms, split_indices

    spec = DatasetSpec(id=args.family, kind="phantom", phantom_family=args.family, count=args.count,
                       seed=args.seed, target_shape=tuple(args.size))
    slices = generate_phantoms(spec)
    out = Path(args.out)
    man = experiments.Manifest(out, "phantoms", spec.to_dict())
    for split in ("train", "val", "test"):
        idx = split_indices(len(slices), spec.split_fractions, split)
        if len(idx):
            for p in export_dataset([slices[i] for i in idx], out / split, prefix=split):
                man.add(p)
    man.write()
    print(f"wrote {len(slices)} {args.family} phantoms to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_config(args)
    out = _output_root(args, doc) / "train"
    path = experiments.run_train(doc, out, args.dataset)
    print(f"training finished; manifest at {path}")
    return EXIT_OK


def cmd_recon(args) -> int:
    from .model import CascadeCheckpoint
    from .train import reconstruct

    for p in (args.checkpoint, args.input, args.mask):
        if not Path(p).exists():
            raise FileNotFoundError(f"not found: {p}")
    ckpt = CascadeCheckpoint.load(args.checkpoint)
    rec = reconstruct(ckpt, io.load_image(args.input), io.load_mask(args.mask))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    io.save_image(args.out, rec)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import cross_domain_table, evaluate_model, write_records_csv
    from .model import CascadeCheckpoint

    doc = _load_config(args)
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    specs = cfgmod.dataset_specs(doc)
    mask, policy = cfgmod.mask_args(doc)
    ckpt = CascadeCheckpoint.load(args.checkpoint)
    name = args.train_domain or ckpt.training_meta.get("dataset", "model")
    datasets = args.dataset or doc.get("eval", {}).get("test_domains") or list(specs)
    out = _output_root(args, doc) / "eval"
    man = experiments.Manifest(out, "eval", doc)
    records = []
    for d in datasets:
        if d not in specs:
            raise DatasetError(f"unknown dataset id {d!r}")
        records += evaluate_model(ckpt, specs[d].with_split(args.split), mask, name, d, policy)
    write_records_csv(records, man.add(out / "records.csv"))
    cross_domain_table(records).to_csv(man.add(out / "table.csv"))
    man.write()
    print(f"evaluated {len(records)} slices; results in {out}")
    return EXIT_OK


def cmd_xdomain(args) -> int:
    doc = _load_config(args)
    out = _output_root(args, doc) / "xdomain"
    res = experiments.run_xdomain(doc, out)
    print(res["table"].to_markdown())
    return EXIT_OK


def cmd_patchdist(args) -> int:
    doc = _load_config(args)
    out = _output_root(args, doc) / "patchdist"
    res = experiments.run_patchdist(doc, out)
    print(res["table"].to_markdown())
    return EXIT_OK


def cmd_report(args) -> int:
    doc = _load_config(args)
    root = _output_root(args, doc)
    path = experiments.run_report(doc, root, root / "report")
    print(f"report written; manifest at {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xdr", description="Cross-domain deep-cascade MRI reconstruction toolkit")
    p.add_argument("--threads", type=int, default=1, help="worker threads for loading and NN search")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--output-dir", help="output root (default: config output_dir, then $XDR_OUTPUT_DIR)")
        sp.add_argument("--seed", type=int, help="override global_seed")
        return sp

    m = sub.add_parser("mask", help="generate a sampling mask")
    m.add_argument("--height", type=int, required=True)
    m.add_argument("--width", type=int, required=True)
    m.add_argument("--accel", type=float, default=4.0)
    m.add_argument("--center-frac", type=float, default=0.08)
    m.add_argument("--sigma", type=float, default=0.25)
    m.add_argument("--mode", choices=["lines-1d", "points-2d"], default="lines-1d")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    s = sub.add_parser("synth", help="convert natural images into phase-synthesised CIMG1 slices")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, nargs=2, default=[256, 256], metavar=("H", "W"))
    s.add_argument("--phase-sigma", type=float, default=16.0)
    s.add_argument("--phase-range", type=float, default=3.141592653589793)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    ph = sub.add_parser("phantoms", help="write a phantom dataset directory with train/val/test splits")
    ph.add_argument("--family", choices=["ellipses", "rectangles", "mixed"], required=True)
    ph.add_argument("--count", type=int, required=True)
    ph.add_argument("--size", type=int, nargs=2, default=[64, 64], metavar=("H", "W"))
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True)
    ph.set_defaults(func=cmd_phantoms)

    t = with_config(sub.add_parser("train", help="train a cascade on one dataset"))
    t.add_argument("--dataset", help="dataset id (overrides train.dataset)")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("recon", help="reconstruct one slice")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_recon)

    e = with_config(sub.add_parser("eval", help="score a checkpoint on datasets"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", action="append", help="dataset id (repeatable)")
    e.add_argument("--train-domain", help="label for the model's row")
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.set_defaults(func=cmd_eval)

    x = with_config(sub.add_parser("xdomain", help="cross-domain train x test PSNR/SSIM table"))
    x.add_argument("--epochs", type=int)
    x.set_defaults(func=cmd_xdomain)

    pd = with_config(sub.add_parser("patchdist", help="cross-domain patch NN distance table"))
    pd.set_defaults(func=cmd_patchdist)

    rp = with_config(sub.add_parser("report", help="bundle tables and error images"))
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    import torch

    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"xdr {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, DatasetError, io.ContainerError, OSError, RuntimeError, ValueError) as exc:
        print(f"xdr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
