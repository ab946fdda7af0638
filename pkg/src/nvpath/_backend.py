"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy/pure
Python twins. Set ``NVPATH_PURE_PYTHON=1`` to force the fallback.
"""

import logging
import os

from nvpath import _pykernels

log = logging.getLogger(__name__)

kernels = _pykernels
compiled = False

if not os.environ.get("NVPATH_PURE_PYTHON"):
    try:
        from nvpath import _kernels as kernels  # noqa: F811

        compiled = True
    except ImportError:  # pragma: no cover - depends on the build
        log.info("compiled kernels unavailable, using pure-Python fallback")

BACKEND = "cython" if compiled else "python"
