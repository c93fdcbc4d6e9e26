"""Both matmul backends must reproduce a naive triple loop bit for bit.

The oracle below is the contract stated in the plainest possible form:
row-major traversal, k-innermost, one f32 (or f64) rounding per multiply and
per add. Everything else in the package leans on the two fast backends
agreeing with this loop exactly, so the comparisons here are on raw bytes,
not almost-equal.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from newvision import errors, kernels
from newvision.kernels import numpy_backend

try:
    from newvision.kernels import _core
except ImportError:
    _core = None

DTYPES = [np.float32, np.float64]


def oracle_matmul(a, b):
    """Reference product: scalar triple loop, k ascending, native dtype."""
    m, k_dim = a.shape
    n = b.shape[1]
    zero = a.dtype.type(0)
    out = np.empty((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = zero
            for k in range(k_dim):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def _random_pair(rng, m, k, n, dtype):
    a = rng.standard_normal((m, k)).astype(dtype)
    b = rng.standard_normal((k, n)).astype(dtype)
    return a, b


def _backends():
    yield "numpy", numpy_backend
    if _core is not None:
        yield "cython", _core


@pytest.mark.parametrize("dtype", DTYPES)
def test_backends_match_oracle_bitwise(dtype):
    rng = np.random.default_rng(7)
    for trial in range(20):
        m, k, n = rng.integers(1, 25, size=3)
        a, b = _random_pair(rng, m, k, n, dtype)
        want = oracle_matmul(a, b)
        for name, impl in _backends():
            got = np.zeros((m, n), dtype=dtype)
            impl.matmul(a, b, got)
            assert got.tobytes() == want.tobytes(), (
                f"{name} diverged from the triple loop on trial {trial} "
                f"with shape ({m},{k})@({k},{n})")


def test_backends_match_each_other_on_large_shapes():
    if _core is None:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(11)
    for m, k, n in [(48, 64, 256), (17, 64, 64), (192, 16, 17), (1, 1, 1)]:
        a, b = _random_pair(rng, m, k, n, np.float32)
        x = np.zeros((m, n), dtype=np.float32)
        y = np.zeros((m, n), dtype=np.float32)
        numpy_backend.matmul(a, b, x)
        _core.matmul(a, b, y)
        assert x.tobytes() == y.tobytes()


@pytest.mark.parametrize("dtype", DTYPES)
def test_bmm_equals_per_slice_matmul(dtype):
    rng = np.random.default_rng(13)
    for _ in range(10):
        bsz, m, k, n = rng.integers(1, 9, size=4)
        a = rng.standard_normal((bsz, m, k)).astype(dtype)
        b = rng.standard_normal((bsz, k, n)).astype(dtype)
        want = np.stack([oracle_matmul(a[t], b[t]) for t in range(bsz)])
        for name, impl in _backends():
            got = np.zeros((bsz, m, n), dtype=dtype)
            impl.bmm(a, b, got)
            assert got.tobytes() == want.tobytes(), name


def test_public_matmul_returns_oracle_bits():
    rng = np.random.default_rng(3)
    a, b = _random_pair(rng, 9, 14, 6, np.float32)
    assert kernels.matmul(a, b).tobytes() == oracle_matmul(a, b).tobytes()


def test_public_matmul_accepts_noncontiguous_views():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((12, 9)).astype(np.float32)
    b = rng.standard_normal((6, 9)).astype(np.float32)
    got = kernels.matmul(a, b.T)
    want = oracle_matmul(a, np.ascontiguousarray(b.T))
    assert got.tobytes() == want.tobytes()


def test_matmul_rejects_inner_dim_mismatch():
    a = np.zeros((3, 4), dtype=np.float32)
    b = np.zeros((5, 2), dtype=np.float32)
    with pytest.raises(errors.ShapeMismatch):
        kernels.matmul(a, b)


def test_matmul_rejects_wrong_rank():
    a = np.zeros((3, 4, 2), dtype=np.float32)
    b = np.zeros((2, 5), dtype=np.float32)
    with pytest.raises(errors.ShapeMismatch):
        kernels.matmul(a, b)


def test_bmm_rejects_batch_mismatch():
    a = np.zeros((2, 3, 4), dtype=np.float32)
    b = np.zeros((3, 4, 5), dtype=np.float32)
    with pytest.raises(errors.ShapeMismatch):
        kernels.bmm(a, b)


def test_mixed_dtypes_rejected():
    a = np.zeros((2, 2), dtype=np.float32)
    b = np.zeros((2, 2), dtype=np.float64)
    with pytest.raises(errors.ConfigError):
        kernels.matmul(a, b)


def _backend_in_subprocess(value):
    env = dict(os.environ, NEWVISION_KERNELS=value)
    return subprocess.run(
        [sys.executable, "-c",
         "from newvision import kernels; print(kernels.backend_name())"],
        capture_output=True, text=True, env=env)


def test_env_var_selects_numpy_backend():
    proc = _backend_in_subprocess("numpy")
    assert proc.returncode == 0
    assert proc.stdout.strip() == "numpy"


def test_env_var_rejects_unknown_backend():
    proc = _backend_in_subprocess("lapack")
    assert proc.returncode != 0
    assert "lapack" in proc.stderr
