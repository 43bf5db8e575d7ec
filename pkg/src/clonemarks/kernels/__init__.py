"""Hot loops, compiled when available.

The Cython extension ``_fast`` is used if it was built; otherwise the numpy
versions in ``_pure`` are used.  Set ``CLONEMARKS_PURE=1`` to force the
fallback.  ``BACKEND`` names the implementation in use.
"""

import os

from . import _pure

if os.environ.get("CLONEMARKS_PURE", "") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _fast as _impl
    except ImportError:  # extension not built
        _impl = _pure

BACKEND = "cython" if _impl is not _pure else "python"

insider_first_detection = _impl.insider_first_detection
fresh_count_segments = _impl.fresh_count_segments
outsider_durations = _impl.outsider_durations

__all__ = ["BACKEND", "insider_first_detection", "fresh_count_segments",
           "outsider_durations"]
