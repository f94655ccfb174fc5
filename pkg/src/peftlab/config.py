"""Experiment configuration: `key = value` lines with dotted task keys.

Example::

    # compare the factored forms on the recovery task
    methods = lora, trilora, flora
    ranks   = 4
    seeds   = 0..19
    steps   = 2000
    lr      = 1e-2
    mpc     = none
    task.kind = recovery
    task.n = 32
    task.m = 32
    task.planted_rank = 4
    task.noise_std = 0.01

Integer lists accept comma items and inclusive `a..b` ranges.  Unknown
keys, bad values, and inconsistent combinations raise ConfigError with
the offending line and field.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError
from .methods import METHOD_NAMES

OPTIMIZERS = ("adam", "sgd")
MPC_KINDS = ("none", "o", "d", "n")
TASK_KINDS = ("recovery", "classification")

CLASSIFICATION_WIDTHS = (2, 256, 256, 2)


@dataclass
class ExperimentConfig:
    methods: tuple = ()
    ranks: tuple = (2, 4, 8, 16)
    seeds: tuple = (0, 1, 2, 3, 4)
    steps: int = 2000
    lr: float = 1e-2
    optimizer: str = "adam"
    batch_size: int = 0
    scale: float = 1.0
    mpc: str = "none"
    lam: float = 1e-3
    master_seed: int = 0
    task_kind: str = "recovery"
    task_n: int = 32
    task_m: int = 32
    task_planted_rank: int = 4
    task_noise_std: float = 0.01


def _int_list(raw):
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            raise ValueError("empty list item")
        if ".." in item:
            lo, hi = item.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"descending range {item!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(item))
    return tuple(out)


def _methods(raw):
    names = tuple(item.strip() for item in raw.split(","))
    for name in names:
        if name not in METHOD_NAMES:
            raise ValueError(f"unknown method {name!r}")
    if len(set(names)) != len(names):
        raise ValueError("duplicate method")
    return names


def _choice(options):
    def convert(raw):
        if raw not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {raw!r}")
        return raw

    return convert


def _positive_int(raw):
    value = int(raw)
    if value < 1:
        raise ValueError("must be positive")
    return value


def _nonneg_int(raw):
    value = int(raw)
    if value < 0:
        raise ValueError("must be nonnegative")
    return value


def _positive_float(raw):
    value = float(raw)
    if not value > 0:
        raise ValueError("must be positive")
    return value


def _nonneg_float(raw):
    value = float(raw)
    if not value >= 0:
        raise ValueError("must be nonnegative")
    return value


def _nonneg_int_list(raw):
    values = _int_list(raw)
    if any(v < 0 for v in values):
        raise ValueError("must be nonnegative")
    if not values:
        raise ValueError("empty list")
    return values


def _rank_list(raw):
    values = _int_list(raw)
    if any(v < 1 for v in values):
        raise ValueError("ranks must be positive")
    return values


KEY_SPECS = {
    "methods": ("methods", _methods),
    "ranks": ("ranks", _rank_list),
    "seeds": ("seeds", _nonneg_int_list),
    "steps": ("steps", _positive_int),
    "lr": ("lr", _positive_float),
    "optimizer": ("optimizer", _choice(OPTIMIZERS)),
    "batch_size": ("batch_size", _nonneg_int),
    "scale": ("scale", float),
    "mpc": ("mpc", _choice(MPC_KINDS)),
    "lambda": ("lam", _nonneg_float),
    "master_seed": ("master_seed", _nonneg_int),
    "task.kind": ("task_kind", _choice(TASK_KINDS)),
    "task.n": ("task_n", _positive_int),
    "task.m": ("task_m", _positive_int),
    "task.planted_rank": ("task_planted_rank", _nonneg_int),
    "task.noise_std": ("task_noise_std", _nonneg_float),
}


def task_layer_dims(config):
    """Weight shapes of the model a config's task builds."""
    if config.task_kind == "recovery":
        return ((config.task_n, config.task_m),)
    widths = CLASSIFICATION_WIDTHS
    return tuple((widths[i], widths[i + 1]) for i in range(len(widths) - 1))


def _cross_validate(config):
    if not config.methods:
        raise ConfigError("config must list at least one method", field="methods")
    if config.mpc == "n" and any(name != "lora" for name in config.methods):
        raise ConfigError(
            "the structural constraint rewrites lora only", field="mpc"
        )
    if config.task_kind == "recovery":
        if config.task_planted_rank > min(config.task_n, config.task_m):
            raise ConfigError(
                "planted rank exceeds the weight shape", field="task.planted_rank"
            )
    min_dim = min(min(n, m) for n, m in task_layer_dims(config))
    if "spectral" in config.methods and max(config.ranks) > min_dim:
        raise ConfigError(
            f"spectral rank cannot exceed {min_dim} for this task", field="ranks"
        )


def parse_config(text):
    config = ExperimentConfig()
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", line=lineno)
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_SPECS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, field=key)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, field=key)
        seen.add(key)
        attr, convert = KEY_SPECS[key]
        try:
            value = convert(raw_value)
        except ValueError as err:
            raise ConfigError(str(err), line=lineno, field=key) from None
        setattr(config, attr, value)
    _cross_validate(config)
    return config


def load_config(path):
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


def config_as_dict(config):
    """Plain dict for the JSON report, key names as written in files."""
    reverse = {attr: key for key, (attr, _) in KEY_SPECS.items()}
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[reverse[f.name]] = value
    return out
