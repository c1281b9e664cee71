"""Select the recursion kernel at import time.

The compiled extension is used when it imports; setting the environment
variable ``HYPSPDE_PURE_PYTHON=1`` forces the NumPy fallback.
"""
import os

from . import _core_py

BACKEND = "python"
advance_block = _core_py.advance_block

if os.environ.get("HYPSPDE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._core import advance_block  # noqa: F811
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        BACKEND = "compiled"

__all__ = ["BACKEND", "advance_block"]
