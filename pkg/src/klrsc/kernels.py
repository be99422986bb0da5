"""Backend selection for the batched solver kernels.

The compiled extension is used when it imports; setting the environment
variable ``KLRSC_PURE_PYTHON=1`` forces the numpy implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("KLRSC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

ista_batch = _impl.ista_batch
ialm_batch = _impl.ialm_batch
lipschitz_batch = _impl.lipschitz_batch


def backends() -> dict:
    """Every importable backend module by name (used by tests and benchmarks)."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
