"""Backend selection and the public matmul/bmm entry points.

The compiled extension is preferred when present because it is roughly an
order of magnitude faster on one core, but both backends promise the same
bits: a fixed k-ascending accumulation order with one rounding per multiply
and per add. NEWVISION_KERNELS=auto|cython|numpy picks explicitly; auto is
the default and quietly falls back when the extension failed to build.
"""

import os

import numpy as np

from .. import errors
from . import numpy_backend

try:
    from . import _core
except ImportError:
    _core = None


def _pick(name: str):
    if name == "numpy":
        return numpy_backend, "numpy"
    if name == "cython":
        if _core is None:
            raise errors.ConfigError(
                "NEWVISION_KERNELS=cython but the compiled extension is not "
                "importable; reinstall with a C compiler or use auto/numpy")
        return _core, "cython"
    if name == "auto":
        if _core is not None:
            return _core, "cython"
        return numpy_backend, "numpy"
    raise errors.ConfigError(f"unknown NEWVISION_KERNELS value: {name!r}")


_impl, _name = _pick(os.environ.get("NEWVISION_KERNELS", "auto"))


def backend_name() -> str:
    return _name


def _check(a: np.ndarray, b: np.ndarray, ndim: int):
    if a.ndim != ndim or b.ndim != ndim:
        raise errors.ShapeMismatch(
            f"expected {ndim}-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise errors.ShapeMismatch(
            f"inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype or a.dtype not in (np.float32, np.float64):
        raise errors.ConfigError(
            f"operands must share a float32/float64 dtype, "
            f"got {a.dtype} and {b.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two 2-D arrays with the pinned accumulation order."""
    _check(a, b, 2)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    _impl.matmul(a, b, out)
    return out


def bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product of two 3-D arrays, one matmul per leading index."""
    _check(a, b, 3)
    if a.shape[0] != b.shape[0]:
        raise errors.ShapeMismatch(
            f"batch dimensions disagree: {a.shape} @ {b.shape}")
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    out = np.zeros((a.shape[0], a.shape[1], b.shape[2]), dtype=a.dtype)
    _impl.bmm(a, b, out)
    return out
