"""Backend selection for the server window integrator.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``FEDECADO_FORCE_PYTHON=1`` forces the fallback.
Both backends stay reachable through ``BACKENDS`` for benchmarking and
agreement tests.
"""

import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled

if _compiled is not None and os.environ.get("FEDECADO_FORCE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _kernels_py

be_solve_diag = _impl.be_solve_diag
be_solve_dense = _impl.be_solve_dense
integrate_window = _impl.integrate_window

STATUS_OK = _kernels_py.STATUS_OK
STATUS_DIVERGED = _kernels_py.STATUS_DIVERGED
STATUS_SUBSTEPS = _kernels_py.STATUS_SUBSTEPS

__all__ = ["BACKEND", "BACKENDS", "be_solve_diag", "be_solve_dense", "integrate_window",
           "STATUS_OK", "STATUS_DIVERGED", "STATUS_SUBSTEPS"]
