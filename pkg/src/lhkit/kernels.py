"""Backend dispatch for the numeric kernels.

Exposes one set of kernel functions; the implementation behind them is the
numba-compiled module or the pure-numpy twin, chosen by :mod:`lhkit.backend`
at import time.  Both twins take the same plain-array arguments and return
the same shapes, so callers never branch on the backend.
"""

from __future__ import annotations

from . import backend

if backend.ACTIVE_BACKEND == "numba":
    from . import _kernels_nb as _impl
else:
    from . import _kernels_np as _impl

sweep_angles = _impl.sweep_angles
closest_points_batch = _impl.closest_points_batch
solve_epochs = _impl.solve_epochs
ekf_process = _impl.ekf_process
align_cell = _impl.align_cell
align_objective_grid = _impl.align_objective_grid


def implementation_name() -> str:
    """Name of the module actually serving the kernels."""
    return _impl.__name__
