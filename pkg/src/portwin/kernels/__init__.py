"""Per-block numeric kernels with a numba fast path and a numpy fallback.

Backend selection, decided once at import time:

* ``PORTWIN_NUMBA=0``  force the pure-numpy backend
* ``PORTWIN_NUMBA=1``  require numba; import fails if it is unusable
* unset / anything else: use numba when importable, else numpy

``BACKEND`` names the active choice ("numba" or "numpy").
"""

import os

from . import numpy_backend

_flag = os.environ.get("PORTWIN_NUMBA", "").strip()

if _flag == "0":
    _impl = numpy_backend
    BACKEND = "numpy"
elif _flag == "1":
    from . import numba_backend as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = numpy_backend
        BACKEND = "numpy"

FLUID = _impl.FLUID
SOLID = _impl.SOLID

jacobi_sweep = _impl.jacobi_sweep
residual = _impl.residual
divergence = _impl.divergence
explicit_x = _impl.explicit_x
explicit_y = _impl.explicit_y
explicit_z = _impl.explicit_z
predictor = _impl.predictor
correct_x = _impl.correct_x
correct_y = _impl.correct_y
correct_z = _impl.correct_z
restrict_cell = _impl.restrict_cell
inject_cell = _impl.inject_cell
inject_add_cell = _impl.inject_add_cell
restrict_face_x = _impl.restrict_face_x
restrict_face_y = _impl.restrict_face_y
restrict_face_z = _impl.restrict_face_z
voxelize_flags = _impl.voxelize_flags

__all__ = [
    "BACKEND",
    "FLUID",
    "SOLID",
    "jacobi_sweep",
    "residual",
    "divergence",
    "explicit_x",
    "explicit_y",
    "explicit_z",
    "predictor",
    "correct_x",
    "correct_y",
    "correct_z",
    "restrict_cell",
    "inject_cell",
    "inject_add_cell",
    "restrict_face_x",
    "restrict_face_y",
    "restrict_face_z",
    "voxelize_flags",
]
