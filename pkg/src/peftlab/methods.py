"""Public method names and the factory that attaches them to a weight.

The fourteen tunable-method names accepted in configs map onto the three
state families; "full_ft" is the extra baseline that simply makes a
trainable copy of the whole layer.  "adalora" and "trilora" share the
diagonal-core form; adalora additionally carries the "o" pattern penalty
when run through the harness.
"""

from dataclasses import dataclass

import numpy as np

from .combination import CombinationState, init_combination_state
from .errors import UnsupportedKindError
from .extension import ExtensionState, init_extension_state
from .linalg import as_matrix
from .reconstruction import ReconstructionState, init_reconstruction_state

METHOD_NAMES = (
    "sam_parser",
    "ia3",
    "ssl",
    "ssb",
    "bitfit",
    "lora",
    "adalora",
    "trilora",
    "flora",
    "serial_adapter",
    "parallel_adapter",
    "dora",
    "svdiff",
    "spectral",
)

FULL_FT = "full_ft"

# methods whose update is a trained (A, B) product; the pattern
# penalties attach to these and only these
FACTORED_METHODS = ("lora", "adalora", "trilora", "flora")

# adalora ships with the orthogonality penalty by definition
IMPLIED_REGULARIZER = {"adalora": "o"}


@dataclass
class FullFtState:
    """Trainable copies of one layer's weight and bias."""

    weight: np.ndarray
    bias: np.ndarray


def make_state(
    method,
    w,
    rank=4,
    rng=None,
    scale=1.0,
    activation="relu",
    frozen_bias=None,
    prompt_len=None,
):
    """Fresh tuner state for `method` attached to frozen weight `w`."""
    w = as_matrix(w)
    n, m = w.shape
    if method == "lora":
        return init_extension_state("lora", n, m, rank, rng, scale)
    if method in ("adalora", "trilora"):
        return init_extension_state("adb", n, m, rank, rng, scale)
    if method == "flora":
        return init_extension_state("agb", n, m, rank, rng, scale)
    if method in ("serial_adapter", "parallel_adapter"):
        return init_extension_state(method, n, m, rank, rng, scale, activation)
    if method == "sam_parser":
        return init_reconstruction_state("singular_values", w)
    if method in ("ia3", "ssl", "ssb"):
        return init_reconstruction_state(method, w)
    if method == "bitfit":
        return init_reconstruction_state("bitfit", w, frozen_bias=frozen_bias)
    if method == "soft_prompt":
        return init_reconstruction_state("soft_prompt", w, prompt_len=prompt_len)
    if method in ("dora", "spectral"):
        return init_combination_state(method, w, r=rank, rng=rng)
    if method == "svdiff":
        return init_combination_state("svdiff", w)
    if method == FULL_FT:
        bias = np.zeros(m) if frozen_bias is None else np.array(frozen_bias, dtype=np.float64)
        return FullFtState(weight=w.copy(), bias=bias)
    raise UnsupportedKindError(f"unknown method {method!r}")


def trainables(state):
    """Live references to the arrays the optimizer may update."""
    if isinstance(state, FullFtState):
        return {"weight": state.weight, "bias": state.bias}
    if isinstance(state, ExtensionState):
        out = {"a": state.a, "b": state.b}
        if state.kind == "adb":
            out["d"] = state.d
        if state.kind == "agb":
            out["g"] = state.g
        return out
    if isinstance(state, ReconstructionState):
        if state.kind == "singular_values":
            return {"sigma_prime": state.sigma_prime}
        if state.kind == "ia3":
            return {"d2": state.d2}
        if state.kind == "ssl":
            return {"d1": state.d1}
        if state.kind == "ssb":
            return {"d1": state.d1, "d2": state.d2}
        if state.kind == "bitfit":
            return {"bias": state.bias}
        if state.kind == "soft_prompt":
            return {"prompt": state.prompt}
    if isinstance(state, CombinationState):
        if state.kind == "dora":
            return {"a": state.a, "b": state.b, "magnitude": state.magnitude}
        if state.kind == "spectral":
            return {"a": state.a, "b": state.b}
        if state.kind == "svdiff":
            return {"shift": state.shift}
    raise UnsupportedKindError(f"no trainables for {type(state).__name__}")


def is_factored(state):
    """True when the state carries a trained (A, B) pair the pattern
    penalties are defined over."""
    return isinstance(state, ExtensionState) and state.kind in ("lora", "adb", "agb")
