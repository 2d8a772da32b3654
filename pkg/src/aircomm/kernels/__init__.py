"""Numerical kernel backend selection.

Prefers the compiled Cython extension; falls back to the numpy reference
implementation when the extension is missing or when the environment
variable ``AIRCOMM_PURE_PYTHON`` is set to a non-empty value.
"""

import os

from . import reference

if os.environ.get("AIRCOMM_PURE_PYTHON"):
    _impl = reference
else:
    try:
        from . import _compiled as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference

BACKEND = _impl.BACKEND
LN2 = reference.LN2
capacity_terms = _impl.capacity_terms
drag_terms = _impl.drag_terms
speed_power_terms = _impl.speed_power_terms
al_weights = _impl.al_weights


def backend_name():
    """Name of the active kernel backend ('compiled' or 'python')."""
    return BACKEND
