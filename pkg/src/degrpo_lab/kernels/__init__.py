"""Hot loops: compiled extension when built, numpy fallback otherwise.

Set ``DEGRPO_LAB_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("DEGRPO_LAB_BACKEND", "").lower() in ("python", "py", "numpy"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

sample_tokens = _impl.sample_tokens
surrogate = _impl.surrogate

__all__ = ["BACKEND", "sample_tokens", "surrogate"]
