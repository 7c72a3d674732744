"""Warp kernel dispatch: compiled extension if built, numpy fallback otherwise.

Set DIFFEOMETER_PURE_PYTHON=1 to force the fallback. IMPL names the active
backend; both expose warp_bilinear(image, src_u, src_v) and
warp_gaussian(image, src_u, src_v, sigma, radius) on channels-first float64
arrays with source positions in pixel units.
"""

import os

from . import warp_py

if os.environ.get("DIFFEOMETER_PURE_PYTHON"):
    _impl = warp_py
    IMPL = "numpy"
else:
    try:
        from . import warp_cy as _impl
        IMPL = "cython"
    except ImportError:
        _impl = warp_py
        IMPL = "numpy"

warp_bilinear = _impl.warp_bilinear
warp_gaussian = _impl.warp_gaussian
