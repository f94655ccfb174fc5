"""Rewrite tuners: spectrum editing, one/two-sided scaling, bias and
prompt augmentation, plus the scaling-equals-spectrum-adjustment identity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peftlab.errors import DomainError, ShapeError
from peftlab.linalg import svd
from peftlab.reconstruction import (
    ReconstructionState,
    augment_bias,
    augment_prompt,
    bitfit_forward,
    column_scale_is_sigma_adjustment,
    ia3_apply,
    init_reconstruction_state,
    mode1_apply,
    soft_prompt_forward,
    ssb_apply,
    ssl_apply,
)


class TestMode1:
    def test_unchanged_sigma_reproduces_w(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((6, 8))
        stt = init_reconstruction_state("singular_values", w)
        assert np.abs(mode1_apply(stt, w) - w).max() < 1e-10

    def test_zero_sigma_gives_zero(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((5, 4))
        stt = init_reconstruction_state("singular_values", w)
        stt.sigma_prime = np.zeros_like(stt.sigma_prime)
        assert np.abs(mode1_apply(stt, w)).max() == 0.0

    def test_doubled_sigma_doubles_w(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((4, 7))
        stt = init_reconstruction_state("singular_values", w)
        stt.sigma_prime = 2.0 * stt.sigma_prime
        assert np.abs(mode1_apply(stt, w) - 2.0 * w).max() < 1e-10

    def test_output_shares_singular_subspaces(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((5, 6))
        stt = init_reconstruction_state("singular_values", w)
        stt.sigma_prime = rng.uniform(0.5, 2.0, size=stt.sigma_prime.shape)
        out = mode1_apply(stt, w)
        f = stt.factors
        core = f.u.T @ out @ f.v
        core_diag = np.zeros_like(core)
        k = min(core.shape)
        core_diag[np.arange(k), np.arange(k)] = np.diag(core)
        assert np.abs(core - core_diag).max() < 1e-9

    def test_factors_must_match_weight(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((4, 4))
        stt = init_reconstruction_state("singular_values", w)
        with pytest.raises(DomainError):
            mode1_apply(stt, w + 1.0)


class TestScaling:
    def test_ia3_hand_value(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        stt = ReconstructionState(kind="ia3", d2=np.array([2.0, 1.0]))
        np.testing.assert_array_equal(
            ia3_apply(stt, w), np.array([[2.0, 2.0], [6.0, 4.0]])
        )

    def test_ssl_hand_value(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        stt = ReconstructionState(kind="ssl", d1=np.array([2.0, 1.0]))
        np.testing.assert_array_equal(
            ssl_apply(stt, w), np.array([[2.0, 4.0], [3.0, 4.0]])
        )

    def test_ones_are_identity_bitwise(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((5, 7))
        assert np.array_equal(ia3_apply(init_reconstruction_state("ia3", w), w), w)
        assert np.array_equal(ssl_apply(init_reconstruction_state("ssl", w), w), w)
        assert np.array_equal(ssb_apply(init_reconstruction_state("ssb", w), w), w)

    def test_ssb_is_composition_of_one_sided_scalings(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((4, 6))
        d1 = rng.uniform(0.5, 2.0, 4)
        d2 = rng.uniform(0.5, 2.0, 6)
        both = ReconstructionState(kind="ssb", d1=d1, d2=d2)
        rows = ReconstructionState(kind="ssl", d1=d1)
        cols = ReconstructionState(kind="ia3", d2=d2)
        np.testing.assert_array_equal(
            ssb_apply(both, w), ia3_apply(cols, ssl_apply(rows, w))
        )

    def test_zero_d2_blanks_columns(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((3, 4))
        d2 = np.array([1.0, 0.0, 1.0, 0.0])
        stt = ReconstructionState(kind="ia3", d2=d2)
        out = ia3_apply(stt, w)
        assert np.abs(out[:, 1]).max() == 0.0
        assert np.abs(out[:, 3]).max() == 0.0

    def test_shape_errors(self):
        w = np.eye(3)
        with pytest.raises(ShapeError):
            ia3_apply(ReconstructionState(kind="ia3", d2=np.ones(2)), w)
        with pytest.raises(ShapeError):
            ssl_apply(ReconstructionState(kind="ssl", d1=np.ones(4)), w)


class TestScaleSpectrumIdentity:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_residual_vanishes(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        w = rng.standard_normal((n, m))
        d1 = rng.uniform(-2.0, 2.0, n)
        d2 = rng.uniform(-2.0, 2.0, m)
        assert column_scale_is_sigma_adjustment(w, d1, d2) < 1e-10

    def test_zero_scales_collapse(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((4, 5))
        assert column_scale_is_sigma_adjustment(w, np.zeros(4), np.zeros(5)) < 1e-12


class TestBitfit:
    def test_augmented_matrix_shape_and_content(self):
        w = np.arange(6.0).reshape(2, 3)
        bias = np.array([1.0, 2.0, 3.0])
        aug = augment_bias(w, bias)
        assert aug.shape == (3, 3)
        np.testing.assert_array_equal(aug[:2], w)
        np.testing.assert_array_equal(aug[2], bias)

    def test_forward_equals_augmented_product(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((5, 4))
        w = rng.standard_normal((4, 3))
        bias = rng.standard_normal(3)
        aug = augment_bias(w, bias)
        x_aug = np.hstack([x, np.ones((5, 1))])
        np.testing.assert_allclose(
            bitfit_forward(x, w, bias), x_aug @ aug, atol=1e-12
        )

    def test_zero_bias_is_plain_product(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(bitfit_forward(x, w, np.zeros(2)), x @ w)


class TestSoftPrompt:
    def test_forward_stacks_prompt_rows(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 5))
        p = rng.standard_normal((2, 5))
        out = soft_prompt_forward(x, w, p)
        assert out.shape == (6, 5)
        np.testing.assert_array_equal(out[:2], p)
        np.testing.assert_allclose(out[2:], x @ w, atol=1e-14)

    def test_forward_equals_block_matrix_product(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        p = rng.standard_normal((2, 2))
        aug = augment_prompt(w, p)  # (2 + 4) x 2
        x_hat = np.zeros((2 + 3, 2 + 4))
        x_hat[:2, :2] = np.eye(2)
        x_hat[2:, 2:] = x
        np.testing.assert_allclose(
            soft_prompt_forward(x, w, p), x_hat @ aug, atol=1e-12
        )

    def test_zero_prompt_leaves_xw_rows(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 5))
        stt = init_reconstruction_state("soft_prompt", w, prompt_len=3)
        out = soft_prompt_forward(x, w, stt.prompt)
        assert np.abs(out[:3]).max() == 0.0
        np.testing.assert_array_equal(out[3:], x @ w)

    def test_prompt_width_checked(self):
        with pytest.raises(ShapeError):
            augment_prompt(np.eye(3), np.ones((2, 4)))


def test_fresh_states_reproduce_weight():
    rng = np.random.default_rng(14)
    w = rng.standard_normal((6, 9))
    mode1 = init_reconstruction_state("singular_values", w)
    assert np.abs(mode1_apply(mode1, w) - w).max() < 1e-10
    for kind, fn in [("ia3", ia3_apply), ("ssl", ssl_apply), ("ssb", ssb_apply)]:
        stt = init_reconstruction_state(kind, w)
        assert np.array_equal(fn(stt, w), w), kind
