"""Hot-loop kernels with a compiled core and a pure numpy fallback.

The Cython extension is optional; build it with
``python setup.py build_ext --inplace``. Set ``UQSEG_NO_EXT=1`` to force the
numpy fallback even when the extension is present (used by the benchmark).
"""

import os

from . import _fallback

if os.environ.get("UQSEG_NO_EXT"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _fallback

conv3x3_fwd = _impl.conv3x3_fwd
conv3x3_bwd = _impl.conv3x3_bwd
maxpool2_fwd = _impl.maxpool2_fwd
maxpool2_bwd = _impl.maxpool2_bwd
upsample2_fwd = _impl.upsample2_fwd
upsample2_bwd = _impl.upsample2_bwd
edt_sq_pass = _impl.edt_sq_pass


def backend_name():
    return _impl.BACKEND
