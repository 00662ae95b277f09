"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy versions
are used.  Setting ``EXFABRIC_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("EXFABRIC_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]

find_boundary_raw = _impl.find_boundary
radix_cluster = _impl.radix_cluster
merge_sorted = _impl.merge_sorted
join_sum = _impl.join_sum


def backend(name: str):
    """Kernel module by name (``"python"`` or ``"cython"``)."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}") from None
