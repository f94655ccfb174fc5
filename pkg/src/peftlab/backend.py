"""Kernel backend selection.

The orthogonalization sweeps behind `linalg.svd` exist twice: a numba
@njit build and a pure-numpy build.  The environment variable
PEFTLAB_BACKEND picks one ("numba" or "numpy"); unset means numba when
it imports, numpy otherwise.  Everything downstream of the kernels is
plain numpy either way.
"""

import os
import warnings

ENV_VAR = "PEFTLAB_BACKEND"


def _resolve() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(
            f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        warnings.warn(
            "numba is not importable; using the pure-numpy kernels",
            stacklevel=2,
        )
        return "numpy"
    return "numba"


BACKEND = _resolve()


def backend_name() -> str:
    return BACKEND
