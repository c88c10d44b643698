"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the
NumPy implementation takes over. ``LEADSEL_KERNELS=python`` forces the
fallback, ``LEADSEL_KERNELS=cython`` makes a missing extension an error.
"""

from __future__ import annotations

import os

from . import _numpy

_requested = os.environ.get("LEADSEL_KERNELS", "").strip().lower()

if _requested in ("python", "numpy"):
    _impl = _numpy
    BACKEND = "numpy"
elif _requested in ("", "cython", "compiled"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested:
            raise ImportError(
                "LEADSEL_KERNELS requested the compiled kernels but the extension is not built"
            )
        _impl = _numpy
        BACKEND = "numpy"
else:
    raise ValueError(f"unknown LEADSEL_KERNELS value {_requested!r}")

quad_form = _impl.quad_form
quad_forms = _impl.quad_forms
quad_form_idx = _impl.quad_form_idx
sm_update = _impl.sm_update
sm_update_idx = _impl.sm_update_idx

DENOM_FLOOR = _numpy.DENOM_FLOOR


def backend_name() -> str:
    return BACKEND
