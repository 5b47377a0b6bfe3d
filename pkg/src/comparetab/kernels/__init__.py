"""Training-kernel backend selection.

The compiled Cython kernel is preferred when its extension module built;
otherwise the NumPy fallback is used. ``COMPARETAB_KERNEL=pure|compiled``
forces a backend (useful for the benchmark and for debugging).
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import pure

log = logging.getLogger(__name__)

try:
    from . import _cbow as _compiled  # type: ignore[attr-defined]
except ImportError:
    _compiled = None


def get_backend(name: str) -> ModuleType:
    if name == "pure":
        return pure
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel not available; build the extension first")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> tuple[str, ...]:
    return ("pure",) if _compiled is None else ("pure", "compiled")


_forced = os.environ.get("COMPARETAB_KERNEL", "").strip().lower()
if _forced:
    active = get_backend(_forced)
else:
    active = _compiled if _compiled is not None else pure
    if _compiled is None:
        log.info("compiled CBOW kernel unavailable, using NumPy fallback")

BACKEND = active.BACKEND_NAME
train_epoch = active.train_epoch
