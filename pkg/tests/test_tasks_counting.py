"""Task generators and parameter counting."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from peftlab.counting import (
    ENCODER_BACKBONE,
    backbone_count,
    count_params,
    count_table,
    encoder_placement,
    mlp_dims,
    permille,
)
from peftlab.errors import ShapeError, UnsupportedKindError
from peftlab.linalg import numerical_rank
from peftlab.methods import FULL_FT, METHOD_NAMES, make_state, trainables
from peftlab.tasks import gen_recovery_task, gen_toy_classification


class TestRecoveryTask:
    def test_shapes_and_exact_targets(self):
        task = gen_recovery_task(0, n=10, m=7, planted_rank=3, noise_std=0.01)
        assert task.w.shape == (10, 7)
        assert task.probe_inputs.shape == (64, 10)
        assert task.targets.shape == (64, 7)
        assert_allclose(task.targets, task.probe_inputs @ task.w_star, rtol=0, atol=0)

    def test_zero_rank_zero_noise_means_no_shift(self):
        task = gen_recovery_task(1, n=6, m=6, planted_rank=0, noise_std=0.0)
        assert np.array_equal(task.w_star, task.w)
        # any tuner starts at phi(W) = W, so the initial loss is already zero
        assert_allclose(task.probe_inputs @ task.w, task.targets, rtol=0, atol=0)

    def test_planted_rank_is_the_numerical_rank(self):
        for rank in (1, 3, 5):
            task = gen_recovery_task(2, n=12, m=9, planted_rank=rank, noise_std=0.0)
            assert numerical_rank(task.w_star - task.w) == rank

    def test_same_seed_identical_bits(self):
        a = gen_recovery_task(7)
        b = gen_recovery_task(7)
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.w_star, b.w_star)
        assert np.array_equal(a.targets, b.targets)
        c = gen_recovery_task(8)
        assert not np.array_equal(a.w, c.w)

    def test_planted_shift_scaling(self):
        # entries of the shift have variance ~1/planted_rank times rank,
        # i.e. unit scale regardless of the planted rank
        spreads = []
        for rank in (2, 8):
            task = gen_recovery_task(3, n=64, m=64, planted_rank=rank, noise_std=0.0)
            spreads.append((task.w_star - task.w).std())
        assert 0.5 < spreads[0] / spreads[1] < 2.0

    def test_rank_out_of_range_rejected(self):
        with pytest.raises(ShapeError):
            gen_recovery_task(0, n=4, m=4, planted_rank=5)
        with pytest.raises(ShapeError):
            gen_recovery_task(0, noise_std=-0.1)


class TestToyClassification:
    def test_shapes_and_exact_balance(self):
        data = gen_toy_classification(0)
        assert data.x_train_a.shape == (2000, 2)
        assert data.x_test_b.shape == (500, 2)
        for labels, count in [
            (data.y_train_a, 2000),
            (data.y_train_b, 2000),
            (data.y_test_a, 500),
            (data.y_test_b, 500),
        ]:
            assert labels.shape == (count,)
            assert labels.sum() == count // 2  # exactly balanced

    def test_determinism(self):
        a = gen_toy_classification(5)
        b = gen_toy_classification(5)
        assert np.array_equal(a.x_train_b, b.x_train_b)
        assert np.array_equal(a.y_test_a, b.y_test_a)

    def test_linear_probe_learns_task_a(self):
        # closed-form least squares on [x, 1] -> +-1 labels
        data = gen_toy_classification(1)
        x = np.hstack([data.x_train_a, np.ones((2000, 1))])
        target = 1.0 - 2.0 * data.y_train_a
        coef, *_ = np.linalg.lstsq(x, target, rcond=None)
        test = np.hstack([data.x_test_a, np.ones((500, 1))])
        pred = (test @ coef < 0).astype(np.int64)
        assert (pred == data.y_test_a).mean() > 0.8

    def test_task_b_is_rotated_and_shifted_task_a(self):
        data = gen_toy_classification(2)
        mean_a = data.x_train_a[data.y_train_a == 0].mean(axis=0)
        mean_b = data.x_train_b[data.y_train_b == 0].mean(axis=0)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert_allclose(mean_b, rot @ mean_a + np.array([0.6, -0.4]), atol=0.1)


def random_dims(rng, layers):
    return [(int(rng.integers(3, 12)), int(rng.integers(3, 12))) for _ in range(layers)]


class TestCounting:
    def test_counts_match_live_trainable_sizes(self):
        # the formulas must agree with the arrays the states actually train
        rng = np.random.default_rng(0)
        for method in METHOD_NAMES + (FULL_FT,):
            dims = random_dims(rng, 3)
            rank = 2
            total = 0
            for n, m in dims:
                w = rng.standard_normal((n, m))
                state = make_state(
                    method, w, rank=rank, rng=rng, frozen_bias=np.zeros(m)
                )
                total += sum(arr.size for arr in trainables(state).values())
            assert count_params(method, dims, rank=rank) == total, method

    def test_soft_prompt_count_matches_state(self):
        w = np.zeros((5, 9))
        state = make_state("soft_prompt", w, prompt_len=3)
        assert count_params("soft_prompt", [(5, 9)], prompt_len=3) == sum(
            arr.size for arr in trainables(state).values()
        )

    def test_encoder_block_counts_and_ratio(self):
        block = encoder_placement(blocks=1)
        ssl = count_params("ssl", block)
        ia3 = count_params("ia3", block)
        ssb = count_params("ssb", block)
        assert (ssl, ia3, ssb) == (2304, 4608, 6912)
        assert (ia3 / ssl, ssb / ssl) == (2.0, 3.0)

    def test_encoder_permille_reproduction(self):
        dims = encoder_placement()
        for method, expected in [("ssl", 0.22), ("ia3", 0.44), ("ssb", 0.66)]:
            value = permille(count_params(method, dims), ENCODER_BACKBONE)
            assert round(value, 2) == expected

    def test_lora_linear_in_rank(self):
        dims = [(768, 768)]
        assert count_params("lora", dims, rank=8) == 12_288
        counts = [count_params("lora", dims, rank=r) for r in (2, 4, 8, 16)]
        assert counts == [counts[0] * s for s in (1, 2, 4, 8)]

    def test_structured_core_increments(self):
        dims = [(10, 6)]
        lora = count_params("lora", dims, rank=3)
        assert count_params("trilora", dims, rank=3) == lora + 3
        assert count_params("flora", dims, rank=3) == lora + 9

    def test_backbone_and_permille(self):
        assert backbone_count([(2, 256), (256, 256), (256, 2)]) == 67_074
        assert permille(67, 67_000) == 1.0
        with pytest.raises(ShapeError):
            permille(1, 0)

    def test_mlp_dims_expansion(self):
        assert mlp_dims((2, 256, 256, 2)) == ((2, 256), (256, 256), (256, 2))
        with pytest.raises(ShapeError):
            mlp_dims((5,))

    def test_rejects_bad_input(self):
        with pytest.raises(UnsupportedKindError):
            count_params("prefix", [(3, 3)])
        with pytest.raises(ShapeError):
            count_params("lora", [(0, 3)])
        with pytest.raises(ShapeError):
            count_params("lora", [(3, 3)], rank=0)
        with pytest.raises(ShapeError):
            count_params("spectral", [(3, 3)], rank=5)

    def test_count_table_rows(self):
        rows = count_table([(8, 8)], ranks=(2, 4))
        methods = {row[0] for row in rows}
        assert methods == set(METHOD_NAMES)
        lora_rows = [row for row in rows if row[0] == "lora"]
        assert [row[1] for row in lora_rows] == [2, 4]
        ssb_rows = [row for row in rows if row[0] == "ssb"]
        assert len(ssb_rows) == 1 and ssb_rows[0][2] == 16
