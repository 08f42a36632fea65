"""Backend selection for the residual-stack kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``FEDRA_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

RELU = _kernels_py.RELU
TANH = _kernels_py.TANH

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("FEDRA_BACKEND", "").lower() not in ("python", "numpy", "py"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

forward_features = _impl.forward_features
forward_logits = _impl.forward_logits
forward_backward = _impl.forward_backward


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"`` (ImportError if unbuilt)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
