"""Select the kernel backend at import time.

The compiled extension is used when it has been built and
``HIERGP_PURE_PYTHON`` is unset (or "0"); otherwise the NumPy fallback.
"""
import os

BACKEND = "python"

if os.environ.get("HIERGP_PURE_PYTHON", "0") in ("", "0"):
    try:
        from hiergp._ckernels import (  # noqa: F401
            matern32_cross,
            matern32_from_distance,
            matern32_sym_with_grad,
            pairwise_distance,
        )

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from hiergp._kernels_py import (  # noqa: F401
        matern32_cross,
        matern32_from_distance,
        matern32_sym_with_grad,
        pairwise_distance,
    )
