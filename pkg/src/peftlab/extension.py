"""Additive tuners: phi(W) = W + s * deltaW.

Five kinds share the state record:

  lora              deltaW = A @ B
  adb               deltaW = A @ diag(d) @ B          (AdaLoRA / TriLoRA form)
  agb               deltaW = A @ G @ B                (full r x r core)
  serial_adapter    deltaW = h(W @ A) @ B             (A is m x r)
  parallel_adapter  deltaW = h(A) @ B                 (A is n x r, identity input)

The adapter rows are the reformulated weight-space view of the usual
bottleneck modules; their native data-path forms are the *_forward
functions at the bottom.  Every kind starts at deltaW = 0 exactly
because B is initialized to zero.
"""

from dataclasses import dataclass

import numpy as np

from . import activations
from .errors import ShapeError, UnsupportedKindError
from .linalg import as_matrix, svd

KINDS = ("lora", "adb", "agb", "serial_adapter", "parallel_adapter")
INIT_STD = 0.02


@dataclass
class ExtensionState:
    kind: str
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray | None = None
    g: np.ndarray | None = None
    scale: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown extension kind {self.kind!r}")
        r = self.a.shape[1]
        if r < 1:
            raise ShapeError("rank must be at least 1")
        if self.b.shape[0] != r:
            raise ShapeError(
                f"A has rank {r} but B has {self.b.shape[0]} rows"
            )
        if self.kind == "adb":
            if self.d is None or self.d.shape != (r,):
                raise ShapeError("adb needs a length-r diagonal vector d")
        if self.kind == "agb":
            if self.g is None or self.g.shape != (r, r):
                raise ShapeError("agb needs an r x r core G")
        if self.kind == "serial_adapter" and self.a.shape[0] != self.b.shape[1]:
            raise ShapeError("serial adapter A must be m x r with B r x m")
        if self.activation not in activations.NAMES:
            raise UnsupportedKindError(
                f"unknown activation {self.activation!r}"
            )

    @property
    def rank(self):
        return self.a.shape[1]


def init_extension_state(kind, n, m, r, rng, scale=1.0, activation="relu"):
    """Fresh state: A ~ N(0, 0.02), B = 0, d = ones, G = identity."""
    if not 1 <= r <= min(n, m):
        raise ShapeError(f"rank {r} out of range for a {n} x {m} weight")
    a_rows = m if kind == "serial_adapter" else n
    a = INIT_STD * rng.standard_normal((a_rows, r))
    b = np.zeros((r, m))
    d = np.ones(r) if kind == "adb" else None
    g = np.eye(r) if kind == "agb" else None
    return ExtensionState(
        kind=kind, a=a, b=b, d=d, g=g, scale=scale, activation=activation
    )


def delta(state, w=None):
    """The additive update deltaW (without the scale factor)."""
    if state.kind == "lora":
        return state.a @ state.b
    if state.kind == "adb":
        return (state.a * state.d) @ state.b
    if state.kind == "agb":
        return state.a @ state.g @ state.b
    if state.kind == "serial_adapter":
        if w is None:
            raise ShapeError("serial_adapter delta needs the frozen weight")
        w = as_matrix(w)
        if w.shape[1] != state.a.shape[0]:
            raise ShapeError(
                f"weight columns {w.shape[1]} != adapter input {state.a.shape[0]}"
            )
        return activations.apply(state.activation, w @ state.a) @ state.b
    if state.kind == "parallel_adapter":
        return activations.apply(state.activation, state.a) @ state.b
    raise UnsupportedKindError(state.kind)


def apply(state, w):
    """phi(W) = W + scale * deltaW; exact identity while B is all zero."""
    w = as_matrix(w)
    if state.scale == 0.0 or not state.b.any():
        return w.copy()
    d = delta(state, w)
    if d.shape != w.shape:
        raise ShapeError(f"deltaW shape {d.shape} != weight shape {w.shape}")
    return w + state.scale * d


def equivalence_transform(a, g, b):
    """Collapse A @ G @ B into two factors with identical product.

    Writes G = U S V^T, then A* = A U S and B` = V^T B satisfy
    A* @ B` = A @ G @ B.  Shows the r x r core adds no expressive power
    beyond re-parametrizing the two-factor form.
    """
    a = as_matrix(a, "a")
    g = as_matrix(g, "g")
    b = as_matrix(b, "b")
    r = a.shape[1]
    if g.shape != (r, r) or b.shape[0] != r:
        raise ShapeError(
            f"need A n x r, G r x r, B r x m; got {a.shape}, {g.shape}, {b.shape}"
        )
    f = svd(g)
    a_star = (a @ f.u) * f.sigma
    b_diamond = f.v.T @ b
    return a_star, b_diamond


def construct_constrained_factors(delta_star, r):
    """Semi-orthogonal factors whose product best approximates delta_star.

    A = first r left singular vectors, B = first r right singular vectors
    transposed, so A^T A = B B^T = I_r, and A @ diag(sigma_r) @ B is the
    best rank-r approximation of delta_star in Frobenius error.
    """
    delta_star = as_matrix(delta_star, "delta_star")
    if not 1 <= r <= min(delta_star.shape):
        raise ShapeError(
            f"rank {r} out of range for shape {delta_star.shape}"
        )
    f = svd(delta_star)
    a = f.u[:, :r].copy()
    b = f.v[:, :r].T.copy()
    return a, b


def serial_adapter_forward(x, a, b, activation="relu"):
    """Bottleneck residual applied to an activation stream: x + h(xA)B."""
    x = as_matrix(x, "x")
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if x.shape[1] != a.shape[0] or b.shape != (a.shape[1], x.shape[1]):
        raise ShapeError(
            f"incompatible adapter shapes x {x.shape}, A {a.shape}, B {b.shape}"
        )
    return x + activations.apply(activation, x @ a) @ b


def parallel_adapter_forward(x, w, a, b, activation="relu"):
    """Side branch around a frozen weight: xW + h(xA)B."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if x.shape[1] != w.shape[0] or a.shape[0] != w.shape[0]:
        raise ShapeError("adapter input dimension must match weight rows")
    if b.shape != (a.shape[1], w.shape[1]):
        raise ShapeError("adapter output dimension must match weight columns")
    return x @ w + activations.apply(activation, x @ a) @ b
