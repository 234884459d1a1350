"""The compiled kernels and the pure-Python fallback must agree exactly."""

import numpy as np
import pytest

from conftest import BACKENDS
from xdrecon import kernels
from xdrecon.kernels import get_backend

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def test_weighted_sample_distinct(backend, rng):
    w = rng.integers(1, 2**32, 500).astype(np.uint64)
    raw = rng.bit_generator.random_raw(500).astype(np.uint64)
    out = get_backend(backend).weighted_sample(w, raw)
    assert sorted(out.tolist()) == list(range(500))


def test_weighted_sample_skips_zero_weights(backend, rng):
    w = np.ones(50, np.uint64)
    w[::2] = 0
    out = get_backend(backend).weighted_sample(w, rng.bit_generator.random_raw(25).astype(np.uint64))
    assert sorted(out.tolist()) == list(range(1, 50, 2))


def test_weighted_sample_frequencies(backend):
    # first draw frequency tracks weights
    w = np.array([1, 3, 6], np.uint64)
    raw = np.random.default_rng(0).bit_generator.random_raw(30000).astype(np.uint64)
    impl = get_backend(backend)
    firsts = np.array([impl.weighted_sample(w, raw[i : i + 1])[0] for i in range(0, 3000)])
    freq = np.bincount(firsts, minlength=3) / len(firsts)
    np.testing.assert_allclose(freq, [0.1, 0.3, 0.6], atol=0.03)


@needs_ext
def test_weighted_sample_backends_identical(rng):
    w = rng.integers(1, 2**40, 7000).astype(np.uint64)
    raw = rng.bit_generator.random_raw(3000).astype(np.uint64)
    np.testing.assert_array_equal(
        get_backend("cython").weighted_sample(w, raw), get_backend("python").weighted_sample(w, raw)
    )


def _run(impl, T, S, bs):
    sq_t, sq_s = (T * T).sum(1), (S * S).sum(1)
    tol = 1e-12 * (sq_t + sq_s.max())
    best, cand = np.full(len(T), np.inf), np.full(len(T), np.inf)
    idx = np.full(len(T), -1, np.int64)
    for o in range(0, len(S), bs):
        g = np.ascontiguousarray(T @ S[o : o + bs].T)
        impl.nn_block_update(g, sq_t, np.ascontiguousarray(sq_s[o : o + bs]), tol, best, cand, idx, o)
    return best, cand, idx


@needs_ext
@pytest.mark.parametrize("bs", [7, 64, 1000])
def test_nn_block_update_backends_identical(rng, bs):
    T, S = rng.random((120, 9)), rng.random((700, 9))
    S[350:] = S[:350]  # exact duplicates: ties must resolve to the lower index
    a, b = _run(get_backend("cython"), T, S, bs), _run(get_backend("python"), T, S, bs)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert (a[2] < 350).all()


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert get_backend("python").__name__.endswith("_fallback")
    with pytest.raises(ValueError):
        get_backend("fortran")
    assert set(BACKENDS) >= {"python"}
