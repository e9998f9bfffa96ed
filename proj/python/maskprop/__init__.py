"""Sequential mask propagation and volumetric segmentation toolkit.

The heavy lifting lives in the compiled extension ``maskprop._core``. When
the package is not installed as a wheel (for example inside the source tree
after a plain CMake build), set ``MASKPROP_CORE_DIR`` to the directory that
holds the built ``_core`` module.
"""

import os
import sys

try:
    from maskprop._core import *  # noqa: F401,F403
    from maskprop._core import __doc__ as _core_doc
except ImportError:  # fall back to a CMake build directory
    _core_dir = os.environ.get("MASKPROP_CORE_DIR")
    if not _core_dir:
        raise
    sys.path.insert(0, _core_dir)
    from _core import *  # noqa: F401,F403
    from _core import __doc__ as _core_doc

__doc__ = _core_doc
__version__ = "0.1.0"
