"""Pure-numpy build of the one-sided Jacobi orthogonalization sweeps.

Same contract as the numba kernel, but rotations are applied one
round-robin round at a time: each round pairs every column exactly once
(disjoint pairs), so the whole round is a single vectorized update.
Rotation order differs from the numba kernel, hence results can differ
in the last bits; both satisfy the same orthogonality contract and each
backend is deterministic on its own.
"""

import numpy as np


def _round_robin(q):
    # circle method; yields (i_idx, j_idx) index arrays per round
    cols = list(range(q))
    if q % 2:
        cols.append(-1)  # bye
    half = len(cols) // 2
    rounds = []
    for _ in range(len(cols) - 1):
        left = cols[:half]
        right = cols[half:][::-1]
        pairs = [(i, j) for i, j in zip(left, right) if i != -1 and j != -1]
        pairs = [(min(i, j), max(i, j)) for i, j in pairs]
        rounds.append(
            (
                np.array([p[0] for p in pairs], dtype=np.intp),
                np.array([p[1] for p in pairs], dtype=np.intp),
            )
        )
        cols = [cols[0]] + [cols[-1]] + cols[1:-1]
    return rounds


def jacobi_orthogonalize(a, v, rel_tol, max_sweeps):
    """Rotate column pairs of `a` until all columns are mutually orthogonal.

    In-place on `a` (p x q) and `v` (q x q); returns sweeps used.
    """
    q = a.shape[1]
    if q < 2:
        return 0
    rounds = _round_robin(q)
    for sweep in range(max_sweeps):
        rotated = False
        for ii, jj in rounds:
            ai = a[:, ii]
            aj = a[:, jj]
            alpha = np.einsum("ki,ki->i", ai, ai)
            beta = np.einsum("ki,ki->i", aj, aj)
            gamma = np.einsum("ki,ki->i", ai, aj)
            active = (gamma != 0.0) & (
                np.abs(gamma) > rel_tol * np.sqrt(alpha * beta)
            )
            if not active.any():
                continue
            zeta = np.zeros_like(gamma)
            np.divide(beta - alpha, 2.0 * gamma, out=zeta, where=active)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0.0] = 1.0  # tan of the 45-degree rotation
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            a[:, ii] = ai * c - aj * s
            a[:, jj] = ai * s + aj * c
            vi = v[:, ii]
            vj = v[:, jj]
            v[:, ii] = vi * c - vj * s
            v[:, jj] = vi * s + vj * c
            rotated = True
        if not rotated:
            return sweep + 1
    return max_sweeps
