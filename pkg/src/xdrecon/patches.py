"""Patch sampling and cross-domain nearest-neighbour distance statistics.

Nearest neighbours are exact. Squared distances are expanded as
``|a|^2 + |b|^2 - 2 a.b`` (float64, negatives clamped to 0) over blocks of
targets and sources; the running minimum is folded by ``kernels.nn_block_update``.
Among candidates within ``1e-12 * (|a|^2 + max |b|^2)`` of the minimum the
lowest source index wins, which absorbs rounding differences between exact
duplicates. The reported distance is recomputed directly from the winning pair.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .kspace import ComplexImage

PATCH_NORMS = ("none", "zero-mean")
TIE_RTOL = 1e-12


@dataclass(eq=False)
class PatchSet:
    vectors: np.ndarray
    patch_size: int
    domain_id: str = ""
    seed: int = 0
    patch_norm: str = "none"

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.patch_size**2:
            raise ValueError(f"vectors must have shape (n, {self.patch_size ** 2}), got {self.vectors.shape}")
        if self.patch_norm not in PATCH_NORMS:
            raise ValueError(f"unknown patch_norm {self.patch_norm!r}")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PatchSet):
            return NotImplemented
        return (
            self.patch_size == other.patch_size
            and self.domain_id == other.domain_id
            and self.seed == other.seed
            and self.patch_norm == other.patch_norm
            and np.array_equal(self.vectors, other.vectors)
        )

    def concat(self, other: "PatchSet", domain_id: str | None = None) -> "PatchSet":
        return PatchSet(np.vstack([self.vectors, other.vectors]), self.patch_size,
                        domain_id or self.domain_id, self.seed, self.patch_norm)


def extract_patches(images, n: int, patch_size: int = 7, seed: int = 0, domain_id: str = "",
                    patch_norm: str = "none") -> PatchSet:
    """Sample ``n`` patches at uniformly random (image, row, col) positions.

    Patches come from each slice's magnitude divided by its maximum and are
    flattened row-major. ``patch_norm="zero-mean"`` subtracts each patch's mean.
    """
    images = list(images)
    if not images:
        raise ValueError("no images to sample patches from")
    if n < 1:
        raise ValueError("n must be positive")
    if patch_norm not in PATCH_NORMS:
        raise ValueError(f"unknown patch_norm {patch_norm!r}")
    mags = []
    for i, img in enumerate(images):
        m = img.magnitude() if isinstance(img, ComplexImage) else np.asarray(img, dtype=np.float64)
        if min(m.shape) < patch_size:
            raise ValueError(f"image {i} of shape {m.shape} is smaller than the {patch_size}x{patch_size} patch")
        peak = m.max()
        mags.append(m / peak if peak > 0 else m)

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    which = rng.integers(0, len(mags), size=n)
    u = rng.random((n, 2))
    heights = np.array([m.shape[0] for m in mags])[which]
    widths = np.array([m.shape[1] for m in mags])[which]
    rows = np.minimum((u[:, 0] * (heights - patch_size + 1)).astype(np.int64), heights - patch_size)
    cols = np.minimum((u[:, 1] * (widths - patch_size + 1)).astype(np.int64), widths - patch_size)

    out = np.empty((n, patch_size * patch_size), dtype=np.float32)
    for k in np.unique(which):
        sel = np.flatnonzero(which == k)
        win = sliding_window_view(mags[k], (patch_size, patch_size))
        out[sel] = win[rows[sel], cols[sel]].reshape(len(sel), -1)
    if patch_norm == "zero-mean":
        out -= out.mean(axis=1, keepdims=True)
    return PatchSet(out, patch_size, domain_id, int(seed), patch_norm)


@dataclass
class NNDistanceResult:
    target_domain: str
    source_domain: str
    distances: np.ndarray
    indices: np.ndarray
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        self.mean = float(np.mean(self.distances))
        self.std = float(np.std(self.distances))


def nn_search(target: np.ndarray, source: np.ndarray, block_size: int = 4096, workers: int = 1,
              backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean nearest neighbour of every target row among source rows.

    Returns ``(distances, indices)``; see the module docstring for tie handling.
    """
    t = np.ascontiguousarray(target, dtype=np.float64)
    s = np.ascontiguousarray(source, dtype=np.float64)
    if t.ndim != 2 or s.ndim != 2 or t.shape[1] != s.shape[1]:
        raise ValueError(f"dimension mismatch: target {t.shape} vs source {s.shape}")
    if s.shape[0] == 0:
        raise ValueError("source set is empty")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    impl = kernels.get_backend(backend)
    sq_t = np.einsum("ij,ij->i", t, t)
    sq_s = np.einsum("ij,ij->i", s, s)
    tol = TIE_RTOL * (sq_t + sq_s.max())
    nt = t.shape[0]
    best = np.full(nt, np.inf)
    cand = np.full(nt, np.inf)
    idx = np.full(nt, -1, dtype=np.int64)

    def run(t0):
        t1 = min(t0 + block_size, nt)
        tb = t[t0:t1]
        for s0 in range(0, s.shape[0], block_size):
            s1 = min(s0 + block_size, s.shape[0])
            gram = np.ascontiguousarray(tb @ s[s0:s1].T)
            impl.nn_block_update(gram, sq_t[t0:t1], sq_s[s0:s1], tol[t0:t1],
                                 best[t0:t1], cand[t0:t1], idx[t0:t1], s0)

    starts = range(0, nt, block_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for t0 in starts:
            run(t0)
    diff = t - s[idx]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return dist, idx


def nn_distances(target: PatchSet, source: PatchSet, block_size: int = 4096, workers: int = 1,
                 backend: str | None = None) -> NNDistanceResult:
    """Distance from every target patch to its nearest source patch."""
    if target.dim != source.dim:
        raise ValueError(f"patch dimension mismatch: {target.dim} vs {source.dim}")
    if source.n == 0:
        raise ValueError("source patch set is empty")
    d, i = nn_search(target.vectors, source.vectors, block_size, workers, backend)
    return NNDistanceResult(target.domain_id, source.domain_id, d, i)


def wilcoxon_signed_rank(x, y, exact_max_n: int = 50) -> tuple[float, float]:
    """Two-sided paired Wilcoxon signed-rank test of ``x - y``.

    Zero differences are dropped; if none remain the p-value is 1. With at
    most ``exact_max_n`` nonzero differences and no tied magnitudes the exact
    null distribution is used, otherwise the normal approximation (with tie
    correction, no continuity correction). Returns ``(W+, p)``.
    """
    from scipy.stats import rankdata

    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    _, counts = np.unique(np.abs(d), return_counts=True)
    ties = counts[counts > 1]
    if n <= exact_max_n and ties.size == 0:
        # counts of subsets of {1..n} by rank sum
        top = n * (n + 1) // 2
        dist = np.zeros(top + 1)
        dist[0] = 1.0
        for r in range(1, n + 1):
            dist[r:] = dist[r:] + dist[: top + 1 - r]
        dist /= dist.sum()
        w = int(round(w_plus))
        p = 2.0 * min(dist[: w + 1].sum(), dist[w:].sum())
        return w_plus, float(min(1.0, p))
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (ties**3 - ties).sum() / 48.0
    if var <= 0:
        return w_plus, 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return w_plus, float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


def compare_sources(target: PatchSet, source_a: PatchSet, source_b: PatchSet, test: str = "wilcoxon",
                    block_size: int = 4096, workers: int = 1, results=None) -> dict:
    """Is ``source_a`` or ``source_b`` closer to ``target``?

    ``test="wilcoxon"`` pairs the two distance vectors by target patch;
    ``"mann-whitney"`` treats them as independent samples. Precomputed
    ``results=(res_a, res_b)`` skip the NN searches.
    """
    if target.n < 10:
        raise ValueError(f"need at least 10 target patches for a significance test, got {target.n}")
    if results is None:
        ra = nn_distances(target, source_a, block_size, workers)
        rb = nn_distances(target, source_b, block_size, workers)
    else:
        ra, rb = results
    if test == "wilcoxon":
        stat, p = wilcoxon_signed_rank(ra.distances, rb.distances)
    elif test == "mann-whitney":
        from scipy.stats import mannwhitneyu

        if np.array_equal(ra.distances, rb.distances):
            stat, p = float(ra.distances.size**2) / 2.0, 1.0
        else:
            res = mannwhitneyu(ra.distances, rb.distances, alternative="two-sided")
            stat, p = float(res.statistic), float(res.pvalue)
    else:
        raise ValueError(f"unknown test {test!r}")
    return {"mean_a": ra.mean, "mean_b": rb.mean, "p_value": p, "statistic": stat, "n": int(target.n), "test": test}


@dataclass
class DistanceTable:
    targets: list
    sources: list
    cells: dict  # (target, source) -> (mean, std); absent on the omitted diagonal
    row_min: dict  # target -> source id with the smallest mean
    p_values: dict  # target -> p of row-min source vs runner-up (None if < 2 sources)
    runner_up: dict

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["target"]
        for s in self.sources:
            header += [f"{s}_mean", f"{s}_std"]
        header += ["row_min", "runner_up", "p_value"]
        w.writerow(header)
        for t in self.targets:
            row = [t]
            for s in self.sources:
                if (t, s) in self.cells:
                    m, sd = self.cells[(t, s)]
                    row += [repr(m), repr(sd)]
                else:
                    row += ["-", "-"]
            p = self.p_values.get(t)
            row += [self.row_min[t], self.runner_up.get(t) or "-", "-" if p is None else repr(p)]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_json(self, path=None) -> str:
        doc = {
            "targets": self.targets,
            "sources": self.sources,
            "cells": [
                {"target": t, "source": s, "mean": self.cells[(t, s)][0], "std": self.cells[(t, s)][1],
                 "row_min": self.row_min[t] == s}
                for t in self.targets
                for s in self.sources
                if (t, s) in self.cells
            ],
            "p_values": {t: self.p_values.get(t) for t in self.targets},
            "runner_up": {t: self.runner_up.get(t) for t in self.targets},
        }
        text = json.dumps(doc, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_markdown(self) -> str:
        lines = ["| Target | " + " | ".join(self.sources) + " |", "|---|" + "---|" * len(self.sources)]
        for t in self.targets:
            vals = []
            for s in self.sources:
                if (t, s) not in self.cells:
                    vals.append("-")
                    continue
                m, sd = self.cells[(t, s)]
                txt = f"{m:.2f}±{sd:.2f}"
                vals.append(f"**{txt}**" if self.row_min[t] == s else txt)
            lines.append(f"| {t} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"


def distance_table(targets, sources, block_size: int = 4096, workers: int = 1, test: str = "wilcoxon") -> DistanceTable:
    """Mean ± std NN distance for every (target, source) pair with distinct ids.

    Each row flags its smallest-mean source and tests it against the
    runner-up with :func:`compare_sources`.
    """
    if len(targets) < 1 or len(sources) < 2:
        raise ValueError("need at least one target and two sources")
    cells, row_min, runner_up, p_values = {}, {}, {}, {}
    for t in targets:
        results = {}
        for s in sources:
            if s.domain_id == t.domain_id:
                continue
            r = nn_distances(t, s, block_size, workers)
            results[s.domain_id] = r
            cells[(t.domain_id, s.domain_id)] = (r.mean, r.std)
        if not results:
            raise ValueError(f"target {t.domain_id!r} has no sources with a different id")
        ranked = sorted(results, key=lambda k: (results[k].mean, [x.domain_id for x in sources].index(k)))
        row_min[t.domain_id] = ranked[0]
        if len(ranked) > 1 and t.n >= 10:
            runner_up[t.domain_id] = ranked[1]
            p_values[t.domain_id] = compare_sources(
                t, None, None, test=test, results=(results[ranked[0]], results[ranked[1]])
            )["p_value"]
    return DistanceTable([t.domain_id for t in targets], [s.domain_id for s in sources], cells, row_min,
                         p_values, runner_up)
