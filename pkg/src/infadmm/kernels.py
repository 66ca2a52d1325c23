"""Backend selection for the convolution core.

The compiled extension is preferred; set ``INFADMM_BACKEND=python`` to force
the numpy fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_requested = os.environ.get("INFADMM_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"INFADMM_BACKEND must be 'python' or 'compiled', got {_requested!r}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("INFADMM_BACKEND=compiled but infadmm._kernels is not built")

BACKEND = _requested or ("compiled" if _compiled is not None else "python")
_impl = BACKENDS[BACKEND]


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _check_center(kernel_size, center):
    for k, c in zip(kernel_size, center):
        if not 0 <= c < k:
            raise ValueError(f"kernel center {tuple(center)} outside kernel of size {tuple(kernel_size)}")


def conv_forward(x, k, center, periodic=True):
    """Correlate a batch ``(N, H, W, Cin)`` with ``(kh, kw, Cin, Cout)`` taps."""
    _check_center(k.shape[:2], center)
    return _impl.conv_forward(_c(x), _c(k), int(center[0]), int(center[1]), bool(periodic))


def conv_adjoint(y, k, center, periodic=True):
    """Exact transpose of :func:`conv_forward` with respect to its input."""
    _check_center(k.shape[:2], center)
    return _impl.conv_adjoint(_c(y), _c(k), int(center[0]), int(center[1]), bool(periodic))


def conv_kernel_grad(x, gy, kernel_size, center, periodic=True):
    """Gradient of ``<conv_forward(x, k), gy>`` with respect to ``k``."""
    _check_center(kernel_size, center)
    kh, kw = kernel_size
    return _impl.conv_kernel_grad(_c(x), _c(gy), int(kh), int(kw),
                                  int(center[0]), int(center[1]), bool(periodic))


def default_center(kernel_size):
    """Center tap used by 'SAME' padding: ``(k - 1) // 2`` per axis."""
    return tuple((k - 1) // 2 for k in kernel_size)
