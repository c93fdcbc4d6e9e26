"""Pure-numpy matmul kernels, bit-identical to the compiled ones.

np.matmul delegates to BLAS, which blocks and reorders the reduction, so two
installs could disagree in the last ulp. Instead the product is accumulated
one k-slice at a time: out += a[:, k] outer b[k, :]. For every output element
that is exactly one multiply-rounding and one add-rounding per k, in
ascending k order, the same sequence the compiled backend and the reference
triple loop perform.
"""

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    """out += a @ b for 2-D operands. out must be pre-zeroed."""
    tmp = np.empty_like(out)
    for k in range(a.shape[1]):
        np.multiply(a[:, k, None], b[None, k, :], out=tmp)
        np.add(out, tmp, out=out)


def bmm(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    """out += a @ b per leading batch index. out must be pre-zeroed."""
    tmp = np.empty_like(out)
    for k in range(a.shape[2]):
        np.multiply(a[:, :, k, None], b[:, None, k, :], out=tmp)
        np.add(out, tmp, out=out)
