"""Subspace tuners for frozen weight matrices, with a training engine,
synthetic benchmarks, and verification suites.

Submodules import lazily so that tooling (like the CLI) can configure
the process before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "svd": "linalg",
    "SvdFactors": "linalg",
    "pinv": "linalg",
    "reconstruct": "linalg",
    "numerical_rank": "linalg",
    "make_state": "methods",
    "trainables": "methods",
    "METHOD_NAMES": "methods",
    "Layer": "engine",
    "Model": "engine",
    "TrainConfig": "engine",
    "train": "engine",
    "forward": "engine",
    "build_mlp": "engine",
    "finite_diff_grad": "engine",
    "RegularizerSpec": "regularizers",
    "mpc_value": "regularizers",
    "mpc_grad": "regularizers",
    "gen_recovery_task": "tasks",
    "gen_toy_classification": "tasks",
    "count_params": "counting",
    "permille": "counting",
    "parse_config": "config",
    "load_config": "config",
    "ExperimentConfig": "config",
    "run_experiment": "harness",
    "compare_methods": "harness",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
