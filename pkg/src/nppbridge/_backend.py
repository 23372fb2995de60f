"""Select the compiled kernels when available, else the NumPy fallback.

Set ``NPPBRIDGE_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

_forced = os.environ.get("NPPBRIDGE_BACKEND", "").strip().lower()

if _forced == "python":
    kernels = _fallback
    NAME = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        NAME = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        kernels = _fallback
        NAME = "python"


def get(name: str | None = None):
    """Kernel namespace by name (``"compiled"`` or ``"python"``); default is active."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
