"""Backend selection for the set-function scans.

The compiled extension is used when it imports; otherwise, or when
``VCGRATIO_PURE_PYTHON=1`` is set, the pure-Python module is used.
"""
import os

from . import _kernels_py

if os.environ.get("VCGRATIO_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

ratio_scan = _impl.ratio_scan
ratio_witnesses = _impl.ratio_witnesses
max_violation = _impl.max_violation
supermodular_violation = _impl.supermodular_violation
kfeas = _impl.kfeas
