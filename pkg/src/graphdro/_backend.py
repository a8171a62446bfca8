"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the numpy
fallback is used.  Override with GRAPHDRO_KERNEL=cython|python (``auto``
and unset mean: compiled if available).
"""

import os

from . import _kernels_py

_choice = os.environ.get("GRAPHDRO_KERNEL", "auto").strip().lower()

if _choice in ("", "auto"):
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        kernels = _kernels_py
elif _choice in ("cython", "compiled", "ext"):
    from . import _kernels as kernels  # type: ignore[attr-defined]
elif _choice in ("python", "numpy", "pure"):
    kernels = _kernels_py
else:
    raise ImportError(f"unknown GRAPHDRO_KERNEL value: {_choice!r}")

BACKEND = kernels.BACKEND_NAME


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401

        names.insert(0, "cython")
    except ImportError:
        pass
    return names
