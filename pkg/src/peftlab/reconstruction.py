"""Tuners that rewrite the frozen weight instead of adding to it.

  singular_values  phi(W) = U diag(sigma') V^T with U, V frozen from W
  ia3              phi(W) = W diag(d2)            (column scaling)
  ssl              phi(W) = diag(d1) W            (row scaling)
  ssb              phi(W) = diag(d1) W diag(d2)   (both sides)
  bitfit           weight untouched, the bias row becomes trainable
  soft_prompt      rows of learned output prepended to x W

Scaling the factor columns and adjusting the singular values are the
same operation; `column_scale_is_sigma_adjustment` computes both sides
independently and returns the residual.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, UnsupportedKindError
from .linalg import SvdFactors, as_matrix, as_vector, svd

KINDS = ("singular_values", "ia3", "ssl", "ssb", "bitfit", "soft_prompt")


def _digest(w):
    return hashlib.sha1(np.ascontiguousarray(w).tobytes()).digest()


@dataclass
class ReconstructionState:
    kind: str
    sigma_prime: np.ndarray | None = None
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    bias: np.ndarray | None = None
    prompt: np.ndarray | None = None
    factors: SvdFactors | None = None
    w_digest: bytes | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(
                f"unknown reconstruction kind {self.kind!r}"
            )


def init_reconstruction_state(kind, w, frozen_bias=None, prompt_len=None):
    """Fresh state for `kind` over frozen weight `w`; phi(W) = W exactly.

    singular_values caches the SVD of `w` here, once; sigma' starts at
    sigma.  bitfit copies the frozen bias (zeros when absent) so the
    first forward pass is unchanged.
    """
    w = as_matrix(w)
    n, m = w.shape
    if kind == "singular_values":
        f = svd(w)
        return ReconstructionState(
            kind=kind,
            sigma_prime=f.sigma.copy(),
            factors=f,
            w_digest=_digest(w),
        )
    if kind == "ia3":
        return ReconstructionState(kind=kind, d2=np.ones(m))
    if kind == "ssl":
        return ReconstructionState(kind=kind, d1=np.ones(n))
    if kind == "ssb":
        return ReconstructionState(kind=kind, d1=np.ones(n), d2=np.ones(m))
    if kind == "bitfit":
        bias = np.zeros(m) if frozen_bias is None else np.array(frozen_bias, dtype=np.float64)
        if bias.shape != (m,):
            raise ShapeError(f"bias length {bias.shape} != weight columns {m}")
        return ReconstructionState(kind=kind, bias=bias)
    if kind == "soft_prompt":
        if prompt_len is None or prompt_len < 1:
            raise ShapeError("soft_prompt needs prompt_len >= 1")
        return ReconstructionState(kind=kind, prompt=np.zeros((prompt_len, m)))
    raise UnsupportedKindError(f"unknown reconstruction kind {kind!r}")


def _check_attached(state, w):
    if state.w_digest != _digest(w):
        raise DomainError(
            "cached factors belong to a different weight matrix"
        )


def mode1_apply(state, w):
    """phi(W) = U diag(sigma') V^T; left/right subspaces stay those of W."""
    w = as_matrix(w)
    if state.kind != "singular_values":
        raise UnsupportedKindError(state.kind)
    _check_attached(state, w)
    f = state.factors
    k = f.sigma.shape[0]
    if state.sigma_prime.shape != (k,):
        raise ShapeError("sigma_prime length does not match the factors")
    return (f.u[:, :k] * state.sigma_prime) @ f.v[:, :k].T


def ia3_apply(state, w):
    w = as_matrix(w)
    if state.d2.shape != (w.shape[1],):
        raise ShapeError("d2 length must equal weight columns")
    return w * state.d2[None, :]


def ssl_apply(state, w):
    w = as_matrix(w)
    if state.d1.shape != (w.shape[0],):
        raise ShapeError("d1 length must equal weight rows")
    return state.d1[:, None] * w


def ssb_apply(state, w):
    """Row scaling then column scaling, same order as composing ssl, ia3."""
    w = as_matrix(w)
    if state.d1.shape != (w.shape[0],) or state.d2.shape != (w.shape[1],):
        raise ShapeError("d1/d2 lengths must match the weight shape")
    return (state.d1[:, None] * w) * state.d2[None, :]


def column_scale_is_sigma_adjustment(w, d1, d2):
    """Residual between the two readings of factor-column scaling.

    Path one scales the factor columns: (U D1) Sigma (V D2)^T.  Path two
    folds the scales into the spectrum: U (D1 Sigma D2) V^T.  Returns the
    max-abs difference of the two products, computed independently.
    """
    w = as_matrix(w)
    n, m = w.shape
    d1 = as_vector(d1, "d1")
    d2 = as_vector(d2, "d2")
    if d1.shape != (n,) or d2.shape != (m,):
        raise ShapeError("d1 must have length rows, d2 length columns")
    f = svd(w)
    k = f.sigma.shape[0]
    sig_rect = np.zeros((n, m))
    sig_rect[np.arange(k), np.arange(k)] = f.sigma
    left = (f.u * d1[None, :]) @ sig_rect @ (f.v * d2[None, :]).T
    sig_hat = np.zeros((n, m))
    sig_hat[np.arange(k), np.arange(k)] = d1[:k] * f.sigma * d2[:k]
    right = f.u @ sig_hat @ f.v.T
    return float(np.abs(left - right).max())


def augment_bias(w, bias):
    """Stack the bias as one extra input row: [W; b^T]."""
    w = as_matrix(w)
    bias = as_vector(bias, "bias")
    if bias.shape != (w.shape[1],):
        raise ShapeError("bias length must equal weight columns")
    return np.vstack([w, bias[None, :]])


def bitfit_forward(x, w, bias):
    """x W + 1 b^T, the data path of the augmented matrix [W; b^T]."""
    x = as_matrix(x, "x")
    w = as_matrix(w)
    bias = as_vector(bias, "bias")
    if x.shape[1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise ShapeError("bitfit shapes inconsistent")
    return x @ w + bias[None, :]


def augment_prompt(w, prompt):
    """Stack prompt rows on top of the weight: [P; W]."""
    w = as_matrix(w)
    prompt = as_matrix(prompt, "prompt")
    if prompt.shape[1] != w.shape[1]:
        raise ShapeError("prompt width must equal weight columns")
    return np.vstack([prompt, w])


def soft_prompt_forward(x, w, prompt):
    """Prompt rows followed by x W.

    Equivalent to the block product [[I, 0], [0, x]] @ [P; W]; the
    prompt only adds output rows, it never alters x W itself.
    """
    x = as_matrix(x, "x")
    w = as_matrix(w)
    prompt = as_matrix(prompt, "prompt")
    if x.shape[1] != w.shape[0] or prompt.shape[1] != w.shape[1]:
        raise ShapeError("soft prompt shapes inconsistent")
    return np.vstack([prompt, x @ w])
