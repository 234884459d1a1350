"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy/pure-Python ``_fallback`` is used. Set ``XDRECON_PURE_PYTHON=1`` to force
the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
if not os.environ.get("XDRECON_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

weighted_sample = _impl.weighted_sample
nn_block_update = _impl.nn_block_update


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
