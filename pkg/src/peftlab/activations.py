"""Pointwise activations with subgradients, shared by tuners and engine."""

import numpy as np

from .errors import UnsupportedKindError

NAMES = ("relu", "tanh", "identity")


def apply(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise UnsupportedKindError(f"unknown activation {name!r}")


def grad(name, pre):
    """Derivative evaluated at the pre-activation; relu uses 0 at the kink."""
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if name == "identity":
        return np.ones_like(pre)
    raise UnsupportedKindError(f"unknown activation {name!r}")
