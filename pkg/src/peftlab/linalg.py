"""Dense linear algebra core: full SVD, pseudo-inverse, norms.

The SVD is computed by one-sided Jacobi: orthogonalize the columns of
W^T by plane rotations, read singular values off the column norms, and
accumulate the rotations into the other factor.  The sweep kernel is
selected by `backend` (numba @njit by default, pure numpy fallback).

Factor convention for an n x m input: u is n x n, sigma has
min(n, m) descending non-negative entries, v is m x m, and
w = u @ diag_rect(sigma) @ v.T.  Inputs with more rows than columns are
factored through their transpose and the factors swapped back.

Deterministic output: fixed sweep order, descending stable sort, the
largest-magnitude entry of every u column is made non-negative (v
compensates on paired columns), and null-space columns are completed
from canonical basis vectors greedily by residual norm.  Identical
input bits give identical output bits on a given backend.
"""

from dataclasses import dataclass

import numpy as np

from .backend import BACKEND
from .errors import DomainError, ShapeError

if BACKEND == "numba":
    from ._kernels_numba import jacobi_orthogonalize
else:
    from ._kernels_numpy import jacobi_orthogonalize

# Rotation threshold relative to the column-norm scale, and the sweep cap.
# A pair stops rotating once its normalized inner product is at 1e-14,
# which bounds |u_i . u_j| at 1e-14 independent of the singular-value
# spread; well inside the 1e-10 orthogonality contract.
JACOBI_REL_TOL = 1e-14
JACOBI_MAX_SWEEPS = 60

PINV_CUTOFF = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    """Full factors of w = u @ diag_rect(sigma) @ v.T."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(x, name="matrix"):
    """Validate and return `x` as a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise DomainError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name="vector"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise DomainError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with explicit shape and domain checks."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: {a.shape} @ {b.shape}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise DomainError("product overflowed to non-finite values")
    return out


def frobenius_norm(w):
    w = as_matrix(w)
    return float(np.sqrt((w * w).sum()))


def column_norms(w):
    w = as_matrix(w)
    return np.sqrt((w * w).sum(axis=0))


def _complete_orthonormal(q_cols, dim, count):
    """Deterministically extend orthonormal columns `q_cols` by `count` more.

    Greedy over canonical basis vectors: always take the one with the
    largest residual after projecting out everything accepted so far
    (first index wins ties), then re-orthogonalize once more for safety.
    """
    out = np.empty((dim, count))
    resid = np.eye(dim)
    if q_cols.shape[1]:
        resid -= q_cols @ q_cols.T
    for idx in range(count):
        norms2 = np.einsum("ij,ij->j", resid, resid)
        j = int(np.argmax(norms2))
        col = resid[:, j] / np.sqrt(norms2[j])
        # second pass keeps orthogonality at the 1e-14 level
        if q_cols.shape[1]:
            col -= q_cols @ (q_cols.T @ col)
        if idx:
            col -= out[:, :idx] @ (out[:, :idx].T @ col)
        col /= np.sqrt((col * col).sum())
        out[:, idx] = col
        resid -= np.outer(col, col @ resid)
    return out


def _svd_wide(w):
    """Factor an n x m input with n <= m; returns (u, sigma, v)."""
    n, m = w.shape
    fro = np.sqrt((w * w).sum())
    a = w.T.copy()  # m x n working copy, columns to orthogonalize
    rot = np.eye(n)
    jacobi_orthogonalize(a, rot, JACOBI_REL_TOL, JACOBI_MAX_SWEEPS)
    # a = w.T @ rot has orthogonal columns z_i = sigma_i * v_i
    norms = np.sqrt(np.einsum("ki,ki->i", a, a))
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    u = rot[:, order]
    z = a[:, order]

    v = np.zeros((m, m))
    fill = []
    floor = fro * 1e-250  # columns below this carry no usable direction
    for i in range(n):
        if sigma[i] > floor:
            v[:, i] = z[:, i] / sigma[i]
        else:
            fill.append(i)
    fill.extend(range(n, m))
    if fill:
        known = v[:, [i for i in range(n) if i not in fill]]
        v[:, fill] = _complete_orthonormal(known, m, len(fill))
    return u, sigma, v


def svd(w):
    """Full singular value decomposition by one-sided Jacobi rotations.

    Returns SvdFactors(u, sigma, v) with u (rows x rows), v (cols x cols)
    orthogonal and sigma the min(rows, cols) singular values, descending.
    """
    w = as_matrix(w)
    rows, cols = w.shape
    if rows == 0 or cols == 0:
        raise ShapeError(f"cannot factor an empty matrix of shape {w.shape}")
    if rows <= cols:
        u, sigma, v = _svd_wide(w)
    else:
        v, sigma, u = _svd_wide(np.ascontiguousarray(w.T))

    k = min(rows, cols)
    # sign convention: largest-magnitude entry of each u column non-negative
    for i in range(rows):
        col = u[:, i]
        if col[int(np.argmax(np.abs(col)))] < 0.0:
            u[:, i] = -col
            if i < k:
                v[:, i] = -v[:, i]
    for j in range(k, cols):
        col = v[:, j]
        if col[int(np.argmax(np.abs(col)))] < 0.0:
            v[:, j] = -col

    u.setflags(write=False)
    sigma.setflags(write=False)
    v.setflags(write=False)
    return SvdFactors(u=u, sigma=sigma, v=v)


def reconstruct(factors):
    """u @ diag_rect(sigma) @ v.T for factors produced by `svd`."""
    u, sigma, v = factors.u, factors.sigma, factors.v
    k = sigma.shape[0]
    return (u[:, :k] * sigma) @ v[:, :k].T


def numerical_rank(w):
    """Count of singular values above the pinv cutoff."""
    w = as_matrix(w)
    f = svd(w)
    if f.sigma.size == 0 or f.sigma[0] == 0.0:
        return 0
    cutoff = PINV_CUTOFF * max(w.shape) * f.sigma[0]
    return int((f.sigma > cutoff).sum())


def pinv(w):
    """Moore-Penrose pseudo-inverse via the Jacobi SVD.

    Singular values at or below 1e-12 * max(rows, cols) * sigma_max are
    dropped, which keeps the four Penrose identities stable on rank-
    deficient input.
    """
    w = as_matrix(w)
    f = svd(w)
    k = f.sigma.shape[0]
    cutoff = PINV_CUTOFF * max(w.shape) * (f.sigma[0] if k else 0.0)
    keep = f.sigma > cutoff
    inv = np.zeros_like(f.sigma)
    inv[keep] = 1.0 / f.sigma[keep]
    return (f.v[:, :k] * inv) @ f.u[:, :k].T
