"""Backend selection for the dataflow inner loops.

The compiled extension (``claccel._kernels``) and the numpy fallback
(``claccel._kernels_py``) are bit-exact twins; whichever is importable
wins, with CLACCEL_FORCE_PYTHON=1 forcing the fallback (used by the
benchmark and the equivalence tests).
"""

import os

if os.environ.get("CLACCEL_FORCE_PYTHON"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

conv_forward_raw = _impl.conv_forward_raw
conv_kernel_grad_raw = _impl.conv_kernel_grad_raw
dense_forward_raw = _impl.dense_forward_raw
dense_input_grad_raw = _impl.dense_input_grad_raw
dense_weight_grad_raw = _impl.dense_weight_grad_raw
