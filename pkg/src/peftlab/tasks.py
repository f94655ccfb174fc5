"""Synthetic benchmark tasks.

Two generators: a planted-rank recovery problem (a hidden optimum
W* = W + low-rank + noise, probed with Gaussian inputs) and a two-phase
toy classification problem (pretrain on task A, fine-tune on a
rotated/shifted task B).  Both are pure functions of their seed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

PROBE_COUNT = 64

TRAIN_POINTS = 2000
TEST_POINTS = 500

# task-B geometry: rotate a quarter turn and translate, so a model
# pretrained on task A starts near chance but the classes stay separable
TASK_B_ANGLE = np.pi / 2.0
TASK_B_SHIFT = (0.6, -0.4)
CLASS_SEPARATION = 1.4
CLASS_STD = 0.55


@dataclass
class RecoveryTask:
    """Hidden-optimum probe-matching problem."""

    w: np.ndarray
    w_star: np.ndarray
    probe_inputs: np.ndarray
    targets: np.ndarray
    planted_rank: int
    noise_std: float


def gen_recovery_task(seed, n=32, m=32, planted_rank=4, noise_std=0.01):
    """Draw a frozen W, plant a low-rank shift plus noise, emit probes.

    W is Gaussian(0, 1/sqrt(n)); the planted shift is X Y^T with both
    factors Gaussian(0, 1/sqrt(planted_rank)); targets are exactly
    probe_inputs @ w_star.
    """
    if not 0 <= planted_rank <= min(n, m):
        raise ShapeError(
            f"planted_rank {planted_rank} out of range for {n}x{m}"
        )
    if noise_std < 0:
        raise ShapeError("noise_std must be nonnegative")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, m)) / np.sqrt(n)
    if planted_rank:
        left = rng.standard_normal((n, planted_rank)) / np.sqrt(planted_rank)
        right = rng.standard_normal((m, planted_rank)) / np.sqrt(planted_rank)
        delta = left @ right.T
    else:
        delta = np.zeros((n, m))
    w_star = w + delta
    if noise_std:
        w_star = w_star + noise_std * rng.standard_normal((n, m))
    probes = rng.standard_normal((PROBE_COUNT, n))
    return RecoveryTask(
        w=w,
        w_star=w_star,
        probe_inputs=probes,
        targets=probes @ w_star,
        planted_rank=planted_rank,
        noise_std=noise_std,
    )


@dataclass
class ToyClassification:
    """Paired 2-D Gaussian-mixture tasks for pretrain/fine-tune runs."""

    x_train_a: np.ndarray
    y_train_a: np.ndarray
    x_test_a: np.ndarray
    y_test_a: np.ndarray
    x_train_b: np.ndarray
    y_train_b: np.ndarray
    x_test_b: np.ndarray
    y_test_b: np.ndarray


def _mixture_split(rng, count, rotation, shift):
    half = count // 2
    pos = rng.normal((CLASS_SEPARATION, 0.0), CLASS_STD, size=(half, 2))
    neg = rng.normal((-CLASS_SEPARATION, 0.0), CLASS_STD, size=(count - half, 2))
    x = np.vstack([pos, neg]) @ rotation.T + shift
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(count - half, dtype=np.int64)])
    order = rng.permutation(count)
    return x[order], y[order]


def gen_toy_classification(seed):
    """Task A along the x axis; task B is A rotated and shifted.

    2000 train / 500 test points per task, labels exactly balanced
    before shuffling.
    """
    rng = np.random.default_rng(seed)
    eye = np.eye(2)
    c, s = np.cos(TASK_B_ANGLE), np.sin(TASK_B_ANGLE)
    rot = np.array([[c, -s], [s, c]])
    shift = np.asarray(TASK_B_SHIFT)
    x_tr_a, y_tr_a = _mixture_split(rng, TRAIN_POINTS, eye, np.zeros(2))
    x_te_a, y_te_a = _mixture_split(rng, TEST_POINTS, eye, np.zeros(2))
    x_tr_b, y_tr_b = _mixture_split(rng, TRAIN_POINTS, rot, shift)
    x_te_b, y_te_b = _mixture_split(rng, TEST_POINTS, rot, shift)
    return ToyClassification(
        x_train_a=x_tr_a,
        y_train_a=y_tr_a,
        x_test_a=x_te_a,
        y_test_a=y_te_a,
        x_train_b=x_tr_b,
        y_train_b=y_tr_b,
        x_test_b=x_te_b,
        y_test_b=y_te_b,
    )
