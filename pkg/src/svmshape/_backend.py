"""Select the compiled kernels when available.

Set ``SVMSHAPE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

smo = _fallback.smo
mc_triangles = _fallback.mc_triangles
NAME = "python"

if os.environ.get("SVMSHAPE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        smo = _core.smo
        mc_triangles = _core.mc_triangles
        NAME = "cython"
