"""Semi-orthogonality penalties for two-factor updates, and the
structural rewrite that turns a plain low-rank update into a
nonlinear side branch.

  mpc value, kind "o":  ||A^T A - I||_F^2 + ||B B^T - I||_F^2
  mpc value, kind "d":  ||A^T A - I||_F^2 + ||B B^T - diag(B B^T)||_F^2
  mpc_n_wrap:           lora state -> parallel_adapter state (kind "n")

Gradients are closed form:

  d/dA ||A^T A - I||^2          = 4 A (A^T A - I)
  d/dB ||B B^T - I||^2          = 4 (B B^T - I) B
  d/dB ||B B^T - diag(...)||^2  = 4 (B B^T - diag(B B^T)) B
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UnsupportedKindError
from .extension import ExtensionState
from .linalg import as_matrix

KINDS = ("none", "o", "d", "n")
DEFAULT_WEIGHT = 1e-3


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    weight: float = DEFAULT_WEIGHT

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown regularizer kind {self.kind!r}")


def _gram_residuals(kind, a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    r = a.shape[1]
    if b.shape[0] != r:
        raise ShapeError(f"A rank {r} does not match B rank {b.shape[0]}")
    ra = a.T @ a - np.eye(r)
    gb = b @ b.T
    if kind == "o":
        rb = gb - np.eye(r)
    else:
        rb = gb - np.diag(np.diag(gb))
    return ra, rb


def mpc_value(kind, a, b):
    """The penalty value; kinds "o" and "d" only."""
    if kind not in ("o", "d"):
        raise UnsupportedKindError(
            f"mpc_value defined for kinds 'o' and 'd', got {kind!r}"
        )
    ra, rb = _gram_residuals(kind, a, b)
    return float((ra * ra).sum() + (rb * rb).sum())


def mpc_grad(kind, a, b):
    """Closed-form gradient of mpc_value with respect to (A, B)."""
    if kind not in ("o", "d"):
        raise UnsupportedKindError(
            f"mpc_grad defined for kinds 'o' and 'd', got {kind!r}"
        )
    ra, rb = _gram_residuals(kind, a, b)
    return 4.0 * (a @ ra), 4.0 * (rb @ b)


def mpc_n_wrap(state, activation="relu"):
    """Rewrite a lora state as a parallel adapter with nonlinearity h.

    The structural counterpart of the pattern penalties: instead of
    penalizing the factors it changes the computation to h(x A) B.
    """
    if not isinstance(state, ExtensionState) or state.kind != "lora":
        raise UnsupportedKindError(
            "mpc kind 'n' rewrites lora states only"
        )
    return ExtensionState(
        kind="parallel_adapter",
        a=state.a.copy(),
        b=state.b.copy(),
        scale=state.scale,
        activation=activation,
    )
