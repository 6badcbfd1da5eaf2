"""Backend selection for the semi-Lagrangian step kernels.

The compiled ``_slcore`` extension is used when it imports; otherwise, or
when ``HJDISC_PURE_PYTHON=1``, the NumPy implementation in ``_fallback``.
"""

from __future__ import annotations

import os

from . import _fallback

_native = None
if os.environ.get("HJDISC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _slcore as _native
    except ImportError:  # extension not built
        _native = None

BACKENDS = {"numpy": _fallback}
if _native is not None:
    BACKENDS["cython"] = _native

DEFAULT_BACKEND = "cython" if _native is not None else "numpy"


def thread_count() -> int:
    """Worker cap from ``HJDISC_THREADS`` (0 or unset = all cores)."""
    raw = os.environ.get("HJDISC_THREADS", "0").strip() or "0"
    k = int(raw)
    if k < 0:
        raise ValueError("HJDISC_THREADS must be >= 0")
    return k if k > 0 else (os.cpu_count() or 1)


def get(name: str | None = None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
