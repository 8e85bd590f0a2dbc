"""Select the compiled core or its pure-Python twin at import time.

Set ``BBMLAB_PURE_PYTHON=1`` to force the fallback (tests use this to check the
two produce identical output).
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("BBMLAB_PURE_PYTHON", "") not in ("", "0"):
    from bbmlab import _pycore as core
else:
    try:
        from bbmlab import _core as core
    except ImportError:  # extension not built
        log.warning("bbmlab._core extension unavailable; using the slow pure-Python core")
        from bbmlab import _pycore as core

COMPILED: bool = core.COMPILED

__all__ = ["core", "COMPILED"]
