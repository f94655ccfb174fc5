"""Trainable-parameter counts and per-mille budget arithmetic.

Counts are closed-form functions of the attached layer shapes and must
agree exactly with the sizes of the live arrays `trainables` exposes;
a test ties the two together.
"""

from .errors import ShapeError, UnsupportedKindError
from .methods import FULL_FT, METHOD_NAMES

# the encoder placement the budget columns are usually quoted against:
# per block, two 768x768 attention matrices plus one 768x3072 FFN
# matrix, twelve blocks, ~125M parameters total
ENCODER_BLOCK_DIMS = ((768, 768), (768, 768), (768, 3072))
ENCODER_BLOCK_COUNT = 12
ENCODER_BACKBONE = 125_000_000


def _check_dims(dims):
    dims = tuple((int(n), int(m)) for n, m in dims)
    for n, m in dims:
        if n < 1 or m < 1:
            raise ShapeError(f"layer dims must be positive, got {n}x{m}")
    return dims


def count_params(method, dims, rank=4, prompt_len=None):
    """Trainable scalars `method` adds across layers shaped `dims`.

    `dims` is an iterable of (n, m) weight shapes; `rank` only matters
    for the factored methods.
    """
    dims = _check_dims(dims)
    factored = (
        "lora", "parallel_adapter", "spectral", "adalora",
        "trilora", "flora", "dora", "serial_adapter",
    )
    if method in factored and rank < 1:
        raise ShapeError(f"rank must be positive, got {rank}")
    if method == "spectral" and any(rank > min(n, m) for n, m in dims):
        raise ShapeError(f"rank {rank} exceeds a layer's spectrum")
    total = 0
    for n, m in dims:
        if method == "lora" or method == "parallel_adapter" or method == "spectral":
            total += rank * (n + m)
        elif method in ("adalora", "trilora"):
            total += rank * (n + m) + rank
        elif method == "flora":
            total += rank * (n + m) + rank * rank
        elif method == "ia3":
            total += m
        elif method == "ssl":
            total += n
        elif method == "ssb":
            total += n + m
        elif method in ("sam_parser", "svdiff"):
            total += min(n, m)  # one scalar per singular value
        elif method == "bitfit":
            total += m
        elif method == "dora":
            total += rank * (n + m) + m
        elif method == "serial_adapter":
            total += 2 * rank * m
        elif method == "soft_prompt":
            if prompt_len is None or prompt_len < 1:
                raise ShapeError("soft_prompt needs prompt_len >= 1")
            total += prompt_len * m
        elif method == FULL_FT:
            total += n * m + m
        else:
            raise UnsupportedKindError(f"unknown method {method!r}")
    return total


def backbone_count(dims):
    """Frozen parameters of the model the tuner attaches to (weights + biases)."""
    dims = _check_dims(dims)
    return sum(n * m + m for n, m in dims)


def permille(count, backbone):
    if backbone < 1:
        raise ShapeError("backbone count must be positive")
    return 1000.0 * count / backbone


def mlp_dims(widths):
    """Consecutive (n, m) weight shapes of an MLP given its widths."""
    widths = tuple(int(v) for v in widths)
    if len(widths) < 2:
        raise ShapeError("an MLP needs at least two widths")
    return tuple((widths[i], widths[i + 1]) for i in range(len(widths) - 1))


def encoder_placement(blocks=ENCODER_BLOCK_COUNT):
    """The attention/FFN attachment shapes repeated over `blocks`."""
    return ENCODER_BLOCK_DIMS * blocks


def count_table(dims, ranks=(2, 4, 8, 16), backbone=None, methods=METHOD_NAMES):
    """Rows of (method, rank, count, permille) for every method/rank.

    Rank-independent methods appear once with rank 0; infeasible
    combinations (a spectral rank beyond a layer's spectrum) are
    skipped rather than fatal.
    """
    if backbone is None:
        backbone = backbone_count(dims)
    rows = []
    for method in methods:
        factored = method in (
            "lora", "adalora", "trilora", "flora", "dora",
            "serial_adapter", "parallel_adapter", "spectral",
        )
        for r in ranks if factored else (0,):
            try:
                count = count_params(method, dims, rank=r if factored else 4)
            except ShapeError:
                continue
            rows.append((method, r, count, permille(count, backbone)))
    return rows
