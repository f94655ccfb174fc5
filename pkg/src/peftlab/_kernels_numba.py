"""numba build of the one-sided Jacobi orthogonalization sweeps."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def jacobi_orthogonalize(a, v, rel_tol, max_sweeps):
    """Rotate column pairs of `a` until all columns are mutually orthogonal.

    `a` (p x q) and `v` (q x q, start from identity) are updated in place so
    that on exit a_out = a_in @ v with v orthogonal.  A pair (i, j) is rotated
    while |a_i . a_j| > rel_tol * ||a_i|| * ||a_j||; sweeps stop early once a
    full pass performs no rotation.  Returns the number of sweeps used.
    """
    p, q = a.shape
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(q - 1):
            for j in range(i + 1, q):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(p):
                    alpha += a[k, i] * a[k, i]
                    beta += a[k, j] * a[k, j]
                    gamma += a[k, i] * a[k, j]
                if gamma == 0.0 or abs(gamma) <= rel_tol * np.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(p):
                    ai = a[k, i]
                    aj = a[k, j]
                    a[k, i] = c * ai - s * aj
                    a[k, j] = s * ai + c * aj
                for k in range(q):
                    vi = v[k, i]
                    vj = v[k, j]
                    v[k, i] = c * vi - s * vj
                    v[k, j] = s * vi + c * vj
                rotated = True
        if not rotated:
            return sweep + 1
    return max_sweeps
