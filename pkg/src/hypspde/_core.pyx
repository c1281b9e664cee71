# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel for the per-mode affine recursion."""


def advance_block(const double[::1] p11, const double[::1] p12,
                  const double[::1] p21, const double[::1] p22,
                  const double[::1] l11, const double[::1] l21, const double[::1] l22,
                  double[::1] u, double[::1] v,
                  const double[:, :, ::1] z,
                  double[:, ::1] U, double[:, ::1] V):
    """Advance every mode through one block of noise.

    ``u' = p11 u + p12 v + l11 z0`` and ``v' = p21 u + p22 v + l21 z0 + l22 z1``
    (``z1`` only when ``z`` has two columns).  States after each step go to
    ``U``/``V``; ``u``/``v`` are overwritten with the final state.
    """
    cdef Py_ssize_t K = u.shape[0]
    cdef Py_ssize_t B = z.shape[1]
    cdef Py_ssize_t dim = z.shape[2]
    cdef Py_ssize_t k, j
    cdef double uk, vk, un, vn, a11, a12, a21, a22, c11, c21, c22, z0
    if p11.shape[0] != K or z.shape[0] != K or U.shape[0] != K or U.shape[1] != B:
        raise ValueError("inconsistent block shapes")
    if V.shape[0] != K or V.shape[1] != B:
        raise ValueError("inconsistent block shapes")
    with nogil:
        for k in range(K):
            uk = u[k]
            vk = v[k]
            a11 = p11[k]; a12 = p12[k]; a21 = p21[k]; a22 = p22[k]
            c11 = l11[k]; c21 = l21[k]; c22 = l22[k]
            if dim >= 2:
                for j in range(B):
                    z0 = z[k, j, 0]
                    un = a11 * uk + a12 * vk + c11 * z0
                    vn = a21 * uk + a22 * vk + c21 * z0 + c22 * z[k, j, 1]
                    U[k, j] = un
                    V[k, j] = vn
                    uk = un
                    vk = vn
            else:
                for j in range(B):
                    z0 = z[k, j, 0]
                    un = a11 * uk + a12 * vk + c11 * z0
                    vn = a21 * uk + a22 * vk + c21 * z0
                    U[k, j] = un
                    V[k, j] = vn
                    uk = un
                    vk = vn
            u[k] = uk
            v[k] = vk
