"""Backend selection for the hot kernels.

The compiled extension ``_ckernels`` is used when it was built; otherwise
the numpy implementations in ``_kernels_py`` are used. Setting the
environment variable ``COSSERAT_LAB_KERNELS=python`` forces the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("COSSERAT_LAB_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def pdirichlet(R, h, p, eps):
    return _impl.pdirichlet(R, h, p, eps)


def laplace7(u, h):
    return _impl.laplace7(u, h)


def backends():
    """Available backend modules keyed by name (used by tests and the benchmark)."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
