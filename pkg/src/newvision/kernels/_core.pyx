# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled matmul kernels with a pinned accumulation order.

Every output element out[i, j] is built by walking k from 0 upward, rounding
once after the multiply and once after the add. That sequence is the whole
contract: it makes results bit-identical to a naive row-major triple loop
(and to the numpy fallback), so training runs are reproducible across
backends. The build must disable FP contraction or FMA fusion would skip
the intermediate rounding.

The loop nest is i, k, j rather than i, j, k: the inner j loop reads b
row-wise and writes out row-wise, which the compiler vectorizes, while the
per-element update order for any fixed (i, j) is still k-ascending.
"""

ctypedef fused real:
    float
    double


def matmul(real[:, ::1] a, real[:, ::1] b, real[:, ::1] out):
    """out += a @ b for 2-D operands. out must be pre-zeroed by the caller."""
    cdef Py_ssize_t M = a.shape[0]
    cdef Py_ssize_t K = a.shape[1]
    cdef Py_ssize_t N = b.shape[1]
    cdef Py_ssize_t i, k, j
    cdef real aik
    with nogil:
        for i in range(M):
            for k in range(K):
                aik = a[i, k]
                for j in range(N):
                    out[i, j] = out[i, j] + aik * b[k, j]


def bmm(real[:, :, ::1] a, real[:, :, ::1] b, real[:, :, ::1] out):
    """out += a @ b per leading batch index. out must be pre-zeroed."""
    cdef Py_ssize_t B = a.shape[0]
    cdef Py_ssize_t M = a.shape[1]
    cdef Py_ssize_t K = a.shape[2]
    cdef Py_ssize_t N = b.shape[2]
    cdef Py_ssize_t t, i, k, j
    cdef real aik
    with nogil:
        for t in range(B):
            for i in range(M):
                for k in range(K):
                    aik = a[t, i, k]
                    for j in range(N):
                        out[t, i, j] = out[t, i, j] + aik * b[t, k, j]
