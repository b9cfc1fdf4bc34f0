"""Kernel lane selection.

The compiled Cython lane is used when its extension module imported
successfully; otherwise the pure-NumPy lane takes over. The environment
variable ``TRIPLETHASH_KERNELS`` forces a lane (``cy`` or ``py``), which the
cross-lane tests and the benchmark rely on.
"""

import os

_choice = os.environ.get("TRIPLETHASH_KERNELS", "").strip().lower()
if _choice not in ("", "cy", "py"):
    raise ImportError(
        f"TRIPLETHASH_KERNELS must be 'cy' or 'py', got {_choice!r}"
    )

if _choice == "py":
    from . import pure as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        if _choice == "cy":
            raise
        from . import pure as _impl

        BACKEND = "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
avgpool2d_forward = _impl.avgpool2d_forward
avgpool2d_backward = _impl.avgpool2d_backward
hamming_distances = _impl.hamming_distances

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "avgpool2d_forward",
    "avgpool2d_backward",
    "hamming_distances",
]
