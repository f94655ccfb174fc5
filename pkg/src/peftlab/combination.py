"""Tuners that mix an additive update with a rewrite of the result.

  dora      phi(W) = (W + A B) diag(m / ||W + A B||_cols)
            magnitude m trainable per column, direction renormalized
  spectral  phi(W) = (U + [A 0]) Sigma (V + [B 0])^T, i.e. the first r
            left/right singular vectors receive additive updates
  svdiff    phi(W) = U relu(Sigma + diag(shift)) V^T, a trainable shift
            of the spectrum clamped at zero

spectral and svdiff cache the SVD of the frozen weight at init and
treat the factors as constants; only A/B respectively shift train.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, UnsupportedKindError
from .linalg import SvdFactors, as_matrix, column_norms, svd

KINDS = ("dora", "spectral", "svdiff")
INIT_STD = 0.02
DEGENERATE_COLUMN_NORM = 1e-30


def _digest(w):
    return hashlib.sha1(np.ascontiguousarray(w).tobytes()).digest()


@dataclass
class CombinationState:
    kind: str
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    magnitude: np.ndarray | None = None
    shift: np.ndarray | None = None
    factors: SvdFactors | None = None
    w_digest: bytes | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(
                f"unknown combination kind {self.kind!r}"
            )

    @property
    def rank(self):
        return self.a.shape[1] if self.a is not None else 0


def init_combination_state(kind, w, r=None, rng=None):
    """Fresh state over frozen `w`; phi(W) = W at this point."""
    w = as_matrix(w)
    n, m = w.shape
    if kind == "dora":
        if not 1 <= r <= min(n, m):
            raise ShapeError(f"rank {r} out of range for {n} x {m}")
        mags = column_norms(w)
        if (mags < DEGENERATE_COLUMN_NORM).any():
            raise DomainError("weight has a zero column; dora undefined")
        return CombinationState(
            kind=kind,
            a=INIT_STD * rng.standard_normal((n, r)),
            b=np.zeros((r, m)),
            magnitude=mags,
        )
    if kind == "spectral":
        if not 1 <= r <= min(n, m):
            raise ShapeError(f"rank {r} out of range for {n} x {m}")
        f = svd(w)
        return CombinationState(
            kind=kind,
            a=np.zeros((n, r)),
            b=np.zeros((m, r)),
            factors=f,
            w_digest=_digest(w),
        )
    if kind == "svdiff":
        f = svd(w)
        return CombinationState(
            kind=kind,
            shift=np.zeros(f.sigma.shape[0]),
            factors=f,
            w_digest=_digest(w),
        )
    raise UnsupportedKindError(f"unknown combination kind {kind!r}")


def _check_attached(state, w):
    if state.w_digest != _digest(w):
        raise DomainError("cached factors belong to a different weight matrix")


def dora_apply(state, w):
    """Renormalize the updated columns, then rescale by the magnitudes."""
    w = as_matrix(w)
    if state.kind != "dora":
        raise UnsupportedKindError(state.kind)
    if state.a.shape[0] != w.shape[0] or state.b.shape[1] != w.shape[1]:
        raise ShapeError("dora factor shapes do not match the weight")
    composed = w + state.a @ state.b if state.b.any() else w
    norms = column_norms(composed)
    if (norms < DEGENERATE_COLUMN_NORM).any():
        raise DomainError("updated weight has a degenerate column")
    return composed * (state.magnitude / norms)[None, :]


def dora_simplified_apply(w, a, b, dvec):
    """(W + A B) diag(dvec): the variant with a free diagonal, no norms."""
    w = as_matrix(w)
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    dvec = np.asarray(dvec, dtype=np.float64)
    if dvec.shape != (w.shape[1],):
        raise ShapeError("dvec length must equal weight columns")
    return (w + a @ b) * dvec[None, :]


def spectral_adapter_apply(state, w):
    """W plus the expansion of updating the first r singular directions.

    (U + [A 0]) Sigma (V + [B 0])^T expands to
    W + A S_r V_r^T + U_r S_r B^T + A S_r B^T with S_r the top-r spectrum.
    """
    w = as_matrix(w)
    if state.kind != "spectral":
        raise UnsupportedKindError(state.kind)
    _check_attached(state, w)
    f = state.factors
    r = state.a.shape[1]
    if state.b.shape[1] != r:
        raise ShapeError("spectral A and B must share the rank")
    u_r = f.u[:, :r]
    v_r = f.v[:, :r]
    s_r = f.sigma[:r]
    a_s = state.a * s_r[None, :]
    return w + a_s @ v_r.T + u_r @ (s_r[:, None] * state.b.T) + a_s @ state.b.T


def spectral_adapter_blockwise(state, w):
    """Same map computed the slow way: perturb the factors, remultiply."""
    w = as_matrix(w)
    _check_attached(state, w)
    f = state.factors
    r = state.a.shape[1]
    k = f.sigma.shape[0]
    u_hat = f.u.copy()
    u_hat[:, :r] += state.a
    v_hat = f.v.copy()
    v_hat[:, :r] += state.b
    return (u_hat[:, :k] * f.sigma) @ v_hat[:, :k].T


def svdiff_apply(state, w):
    """phi(W) = U relu(Sigma + shift) V^T over the cached factors."""
    w = as_matrix(w)
    if state.kind != "svdiff":
        raise UnsupportedKindError(state.kind)
    _check_attached(state, w)
    f = state.factors
    k = f.sigma.shape[0]
    if state.shift.shape != (k,):
        raise ShapeError("shift length must match the spectrum")
    clamped = np.maximum(f.sigma + state.shift, 0.0)
    return (f.u[:, :k] * clamped) @ f.v[:, :k].T


def svdiff_delta_form(state, w):
    """Identical map written as W + U max(shift, -sigma) V^T."""
    w = as_matrix(w)
    _check_attached(state, w)
    f = state.factors
    k = f.sigma.shape[0]
    bounded = np.maximum(state.shift, -f.sigma)
    return w + (f.u[:, :k] * bounded) @ f.v[:, :k].T
