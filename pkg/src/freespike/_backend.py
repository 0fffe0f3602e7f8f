"""Kernel selection.

The compiled ``_core`` extension is used when importable; otherwise the numpy
kernels in ``_kernels_py`` take over. Setting ``FREESPIKE_PURE=1`` in the
environment forces the fallback (used by the benchmark and parity tests).
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("FREESPIKE_PURE", "") not in ("", "0"):
    kernels = _kernels_py
    COMPILED = False
else:
    try:
        from . import _core as kernels  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:  # pragma: no cover - depends on the build
        kernels = _kernels_py
        COMPILED = False

BACKEND = "cython" if COMPILED else "python"

__all__ = ["kernels", "COMPILED", "BACKEND"]
