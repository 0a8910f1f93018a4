"""Propagator-chain kernels with import-time implementation selection.

The compiled Cython module is preferred; the pure-numpy fallback is used
when it is unavailable or when RALLYQOC_PURE=1 is set. Both expose the
same five functions with identical contracts.
"""

import os

from . import chain_numpy

if os.environ.get("RALLYQOC_PURE") == "1":
    _impl = chain_numpy
else:
    try:
        from . import _chain as _impl
    except ImportError:
        _impl = chain_numpy

IMPLEMENTATION = _impl.IMPLEMENTATION
chain_fresh = _impl.chain_fresh
chain_fresh_batch = _impl.chain_fresh_batch
chain_cached = _impl.chain_cached
chain_cached_batch = _impl.chain_cached_batch
chain_cached_apply = _impl.chain_cached_apply

__all__ = [
    "IMPLEMENTATION",
    "chain_fresh",
    "chain_fresh_batch",
    "chain_cached",
    "chain_cached_batch",
    "chain_cached_apply",
    "chain_numpy",
]
