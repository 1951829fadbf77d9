"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels``. Set ``AESPLAN_PURE_PYTHON=1`` to force the
fallback.
"""

import os

if os.environ.get("AESPLAN_PURE_PYTHON", "") not in ("", "0"):
    from aesplan import _pykernels as _impl
else:
    try:
        from aesplan import _ckernels as _impl
    except ImportError:  # extension not built
        from aesplan import _pykernels as _impl

BACKEND = _impl.BACKEND
NeighborIndex = _impl.NeighborIndex
arm_points = _impl.arm_points
box_signed_distance = _impl.box_signed_distance
box_penalty = _impl.box_penalty
settle = _impl.settle


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    from aesplan import _pykernels

    out = {"python": _pykernels}
    try:
        from aesplan import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
