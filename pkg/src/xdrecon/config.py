"""Run configuration: JSON schema, validation and conversion to library objects."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .data import DatasetSpec
from .kspace import ConfigError
from .model import CascadeConfig
from .phase import PhaseParams
from .train import MaskArgs

_num_or_inf = {"anyOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]}
_u64 = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


DATASET_SCHEMA = _obj(
    {
        "id": {"type": "string", "minLength": 1},
        "kind": {"enum": ["complex-slices", "natural-images", "phantom"]},
        "root": {"type": "string"},
        "target_shape": {"type": "array", "items": {"type": "integer", "minimum": 32}, "minItems": 2, "maxItems": 2},
        "split_fractions": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
        "phase_params": _obj(
            {
                "smoothness_sigma": {"type": "number", "exclusiveMinimum": 0},
                "phase_range": {"type": "number", "exclusiveMinimum": 0},
                "seed": _u64,
            }
        ),
        "phantom_family": {"enum": ["ellipses", "rectangles", "mixed"]},
        "count": {"type": "integer", "minimum": 1},
        "seed": _u64,
    },
    required=("id", "kind"),
)

RUN_SCHEMA = _obj(
    {
        "datasets": {"type": "array", "items": DATASET_SCHEMA},
        "mask": _obj(
            {
                "acceleration": {"type": "number", "minimum": 1},
                "center_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["lines-1d", "points-2d"]},
                "seed": _u64,
                "policy": {"enum": ["fixed", "per-sample"]},
            }
        ),
        "cascade": _obj(
            {
                "n_cascades": {"type": "integer", "minimum": 1},
                "n_conv_per_block": {"type": "integer", "minimum": 2},
                "n_filters": {"type": "integer", "minimum": 1},
                "kernel_size": {"type": "integer", "minimum": 1},
                "dc_lambda": _num_or_inf,
            }
        ),
        "train": _obj(
            {
                "dataset": {"type": "string"},
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "minimum": 0},
                "optimizer": {"enum": ["adaptive-moment", "sgd-momentum"]},
                "seed": _u64,
            }
        ),
        "eval": _obj(
            {
                "train_domains": {"type": "array", "items": {"type": "string"}},
                "test_domains": {"type": "array", "items": {"type": "string"}},
                "checkpoints": {"type": "object", "additionalProperties": {"type": "string"}},
                "split": {"enum": ["train", "val", "test"]},
                "error_gain": {"type": "number", "exclusiveMinimum": 0},
                "n_error_images": {"type": "integer", "minimum": 0},
            }
        ),
        "patch_stats": _obj(
            {
                "targets": {"type": "array", "items": {"type": "string"}},
                "sources": {"type": "array", "items": {"type": "string"}},
                "n_patches": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
                "default_n": {"type": "integer", "minimum": 1},
                "patch_size": {"type": "integer", "minimum": 1},
                "patch_norm": {"enum": ["none", "zero-mean"]},
                "block_size": {"type": "integer", "minimum": 1},
                "test": {"enum": ["wilcoxon", "mann-whitney"]},
                "split": {"enum": ["train", "val", "test"]},
                "seed": _u64,
            }
        ),
        "output_dir": {"type": "string"},
        "global_seed": _u64,
    }
)


def validate(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    ids = [d["id"] for d in doc.get("datasets", [])]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate dataset ids in {ids}")
    return doc


def load(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate(doc)


def config_hash(doc: dict) -> str:
    """sha256 of the canonical JSON config; ``output_dir`` is not part of it."""
    doc = {k: v for k, v in doc.items() if k != "output_dir"}
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def global_seed(doc) -> int:
    return int(doc.get("global_seed", 0))


def dataset_specs(doc: dict) -> dict[str, DatasetSpec]:
    specs = {}
    for d in doc.get("datasets", []):
        d = dict(d)
        if "phase_params" in d:
            d["phase_params"] = PhaseParams(**d["phase_params"])
        if "seed" not in d:
            d["seed"] = global_seed(doc)
        try:
            specs[d["id"]] = DatasetSpec(**d)
        except ValueError as exc:
            raise ConfigError(f"dataset {d['id']!r}: {exc}") from exc
    return specs


def mask_args(doc: dict) -> tuple[MaskArgs, str]:
    m = dict(doc.get("mask", {}))
    policy = m.pop("policy", "per-sample")
    m.setdefault("seed", global_seed(doc))
    return MaskArgs(**m), policy


def cascade_config(doc: dict) -> CascadeConfig:
    try:
        return CascadeConfig.from_dict(doc.get("cascade", {}))
    except ValueError as exc:
        raise ConfigError(f"cascade: {exc}") from exc
