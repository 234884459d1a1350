"""CIMG1 containers for complex slices, sampling masks and patch sets.

Layout: the 5-byte magic ``CIMG1``, one line of compact JSON header, then
row-major little-endian planes. Complex slices (``"dtype":"f32"``) carry a real
and an imaginary plane; masks (``"dtype":"u8"``) a single plane of 0/1 bytes;
patch sets a single f32 plane of shape ``n x patch_size**2`` flagged with
``"kind":"patches"``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .kspace import ComplexImage, SamplingMask

MAGIC = b"CIMG1"


class ContainerError(ValueError):
    """A CIMG1 file that cannot be parsed."""


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"


def _write(path, header: dict, planes) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_header_bytes(header))
        for p in planes:
            fh.write(np.ascontiguousarray(p).tobytes(order="C"))


def read_container(path) -> tuple[dict, bytes]:
    """Return ``(header, payload)`` of a CIMG1 file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: cannot read ({exc})") from exc
    if data[:5] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:5]!r}, expected {MAGIC!r}")
    nl = data.find(b"\n", 5)
    if nl < 0:
        raise ContainerError(f"{path}: unterminated header")
    try:
        header = json.loads(data[5:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: malformed header ({exc})") from exc
    if not isinstance(header, dict):
        raise ContainerError(f"{path}: header is not a JSON object")
    for key in ("height", "width", "dtype"):
        if key not in header:
            raise ContainerError(f"{path}: header missing {key!r}")
    h, w = header["height"], header["width"]
    if not (isinstance(h, int) and isinstance(w, int) and h > 0 and w > 0):
        raise ContainerError(f"{path}: invalid dimensions {h}x{w}")
    return header, data[nl + 1 :]


def _planes(path, header, payload, dtype, count):
    h, w = header["height"], header["width"]
    itemsize = np.dtype(dtype).itemsize
    expected = count * h * w * itemsize
    if len(payload) != expected:
        raise ContainerError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(count, h, w)
    return arr.copy()


def save_image(path, img: ComplexImage, **extra) -> None:
    header = {"height": img.height, "width": img.width, "dtype": "f32"}
    header.update(extra)
    _write(path, header, [img.real.astype("<f4"), img.imag.astype("<f4")])


def load_image(path) -> ComplexImage:
    header, payload = read_container(path)
    if header["dtype"] != "f32" or header.get("kind", "image") != "image":
        raise ContainerError(f"{path}: not a complex slice (dtype={header['dtype']!r})")
    planes = _planes(path, header, payload, "<f4", 2)
    try:
        return ComplexImage(planes[0], planes[1])
    except ValueError as exc:
        raise ContainerError(f"{path}: {exc}") from exc


def save_mask(path, mask: SamplingMask) -> None:
    header = {
        "height": mask.height,
        "width": mask.width,
        "dtype": "u8",
        "acceleration": mask.acceleration,
        "center_fraction": mask.center_fraction,
        "mode": mask.mode,
        "seed": mask.seed,
        "sigma": mask.sigma,
    }
    _write(path, header, [mask.sampled.astype(np.uint8)])


def load_mask(path) -> SamplingMask:
    header, payload = read_container(path)
    if header["dtype"] != "u8":
        raise ContainerError(f"{path}: not a mask (dtype={header['dtype']!r})")
    plane = _planes(path, header, payload, np.uint8, 1)[0]
    if plane.max(initial=0) > 1:
        raise ContainerError(f"{path}: mask plane must contain only 0/1")
    try:
        return SamplingMask(
            plane.astype(bool),
            float(header["acceleration"]),
            float(header["center_fraction"]),
            header["mode"],
            int(header["seed"]),
            float(header.get("sigma", 0.25)),
        )
    except (KeyError, ValueError) as exc:
        raise ContainerError(f"{path}: bad mask header ({exc})") from exc


def save_patches(path, patches) -> None:
    header = {
        "height": patches.n,
        "width": patches.patch_size**2,
        "dtype": "f32",
        "kind": "patches",
        "patch_size": patches.patch_size,
        "n": patches.n,
        "domain_id": patches.domain_id,
        "seed": patches.seed,
        "patch_norm": patches.patch_norm,
    }
    _write(path, header, [patches.vectors.astype("<f4")])


def load_patches(path):
    from .patches import PatchSet

    header, payload = read_container(path)
    if header.get("kind") != "patches":
        raise ContainerError(f"{path}: not a patch set")
    vec = _planes(path, header, payload, "<f4", 1)[0]
    return PatchSet(
        vectors=vec.astype(np.float32),
        patch_size=int(header["patch_size"]),
        domain_id=str(header["domain_id"]),
        seed=int(header["seed"]),
        patch_norm=header.get("patch_norm", "none"),
    )


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
