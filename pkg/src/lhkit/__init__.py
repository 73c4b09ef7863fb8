"""Sweep-beam indoor positioning toolkit.

Triangulates and filters positions from rotating-light-plane base stations,
simulates full recording sessions, aligns them to mocap ground truth, and
reports precision/accuracy statistics.  Heavy numeric kernels run on a
numba backend with a pure-numpy fallback (see lhkit.backend).
"""

__version__ = "0.1.0"

from .backend import active_backend
from .errors import LhkitError

__all__ = ["__version__", "active_backend", "LhkitError"]
