"""Pure-NumPy fallback for the compiled recursion kernel."""
import numpy as np


def advance_block(p11, p12, p21, p22, l11, l21, l22, u, v, z, U, V):
    """Same contract as the compiled ``advance_block``; vectorised over modes."""
    K, B, dim = z.shape
    if U.shape != (K, B) or V.shape != (K, B) or u.shape != (K,):
        raise ValueError("inconsistent block shapes")
    uk = u.copy()
    vk = v.copy()
    for j in range(B):
        z0 = z[:, j, 0]
        un = p11 * uk + p12 * vk + l11 * z0
        if dim >= 2:
            vn = p21 * uk + p22 * vk + l21 * z0 + l22 * z[:, j, 1]
        else:
            vn = p21 * uk + p22 * vk + l21 * z0
        U[:, j] = un
        V[:, j] = vn
        uk, vk = un, vn
    u[:] = uk
    v[:] = vk
