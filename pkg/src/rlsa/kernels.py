"""Backend selection for the per-step loops.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``RLSA_PURE_PYTHON`` is set to a non-empty value other
than ``0``) the pure-Python module is used.  Both expose the same functions.
"""
import os

from . import _kernels_py

_force_py = os.environ.get("RLSA_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

sample_path = _impl.sample_path
linear_td_run = _impl.linear_td_run
q_learning_run = _impl.q_learning_run
rs_envelope = _impl.rs_envelope


def backends():
    """Map of available backend name -> module (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
