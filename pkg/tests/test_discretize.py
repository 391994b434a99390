import math

import numpy as np
import pytest

from core import DriftField, EdgeMask, OperatorKind, PositiveImage, ShapeMismatchError
from discretize import (
    assemble_full,
    assemble_split,
    combine,
    drift_from_reference,
    pr_stability_bound,
    zero_drift_on_mask,
)
from solvers import dense_matrix


def _random_drift(rng, width, height, scale=1.5):
    return DriftField(
        rng.uniform(-scale, scale, size=(height, width - 1)),
        rng.uniform(-scale, scale, size=(height - 1, width)),
    )


# --- drift_from_reference ---


def test_constant_reference_gives_zero_drift():
    d = drift_from_reference(PositiveImage(np.full((5, 7), 3.0)))
    assert d.max_abs() == 0.0


def test_two_pixel_reference_hand_value():
    d = drift_from_reference(PositiveImage(np.array([[1.0, 3.0]])))
    assert d.d1.shape == (1, 1)
    assert d.d1[0, 0] == 1.0
    assert d.d2.shape == (0, 2)


@pytest.mark.parametrize("a", [0.01, 0.1])
def test_exponential_reference_approximates_log_gradient(a):
    x = np.arange(20, dtype=float)
    v = PositiveImage(np.tile(np.exp(a * x), (3, 1)))
    d = drift_from_reference(v)
    # 2 tanh(a/2) = a - a^3/12 + ...
    assert np.allclose(d.d1, a, atol=a ** 3 / 6)
    assert np.allclose(d.d2, 0.0)


def test_reference_is_exact_steady_state():
    rng = np.random.default_rng(1)
    v = PositiveImage(rng.uniform(0.5, 255.0, size=(64, 64)))
    a = assemble_full(drift_from_reference(v))
    residual = a.apply(v.data)
    assert np.abs(residual).max() <= 1e-12 * v.data.max()


# --- zero_drift_on_mask ---


def test_mask_zeroes_exactly_the_marked_edges():
    rng = np.random.default_rng(2)
    d = _random_drift(rng, 6, 5)

    assert np.array_equal(zero_drift_on_mask(d, EdgeMask.empty(6, 5)).d1, d.d1)

    full = EdgeMask(np.ones((5, 5), dtype=bool), np.ones((4, 6), dtype=bool))
    zeroed = zero_drift_on_mask(d, full)
    assert zeroed.max_abs() == 0.0

    m1 = np.zeros((5, 5), dtype=bool)
    m1[2, 3] = True
    partial = zero_drift_on_mask(d, EdgeMask(m1, np.zeros((4, 6), dtype=bool)))
    assert partial.d1[2, 3] == 0.0
    assert np.array_equal(partial.d1[~m1], d.d1[~m1])
    assert np.array_equal(partial.d2, d.d2)


def test_mask_on_the_two_pixel_example():
    d = drift_from_reference(PositiveImage(np.array([[1.0, 3.0]])))
    masked = zero_drift_on_mask(d, EdgeMask(np.array([[True]]), np.zeros((0, 2), dtype=bool)))
    assert masked.d1[0, 0] == 0.0


def test_mask_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        zero_drift_on_mask(DriftField.zeros(4, 4), EdgeMask.empty(5, 4))


# --- Operators ---


def test_zero_drift_interior_stencil_is_laplacian():
    a = assemble_full(DriftField.zeros(7, 7))
    assert a.wC[3, 3] == -4.0
    assert (a.wE[3, 3], a.wW[3, 3], a.wN[3, 3], a.wS[3, 3]) == (1.0, 1.0, 1.0, 1.0)
    a1, a2 = assemble_split(DriftField.zeros(7, 7))
    assert a1.wC[3, 3] == -2.0 and a2.wC[3, 3] == -2.0


def test_zero_drift_scaling_with_spacing():
    a = assemble_full(DriftField.zeros(7, 7, h=0.5))
    assert a.wC[3, 3] == -16.0


def test_two_pixel_operator_hand_values():
    d = drift_from_reference(PositiveImage(np.array([[1.0, 3.0]])))
    a = assemble_full(d)
    assert (a.wC[0, 0], a.wE[0, 0]) == (-1.5, 0.5)
    assert (a.wW[0, 1], a.wC[0, 1]) == (1.5, -0.5)
    assert np.allclose(a.apply(np.array([[1.0, 3.0]])), 0.0)
    matrix = dense_matrix(a)
    assert np.allclose(matrix.sum(axis=0), 0.0)

    a1, a2 = assemble_split(d)
    assert not a2.wC.any() and not a2.wN.any() and not a2.wS.any()
    assert np.array_equal(a1.wC, a.wC) and np.array_equal(a1.wE, a.wE)


def test_absent_neighbours_have_zero_weight():
    rng = np.random.default_rng(3)
    a = assemble_full(_random_drift(rng, 5, 4))
    assert not a.wW[:, 0].any() and not a.wE[:, -1].any()
    assert not a.wN[0, :].any() and not a.wS[-1, :].any()


@pytest.mark.parametrize("size", [(2, 3), (8, 8), (16, 16), (16, 5)])
def test_column_sums_vanish_and_split_adds_up(size):
    width, height = size
    rng = np.random.default_rng(width * 100 + height)
    d = _random_drift(rng, width, height)
    a1, a2 = assemble_split(d)
    a = assemble_full(d)
    assert a.kind is OperatorKind.FULL
    dense_a, dense_1, dense_2 = dense_matrix(a), dense_matrix(a1), dense_matrix(a2)
    for matrix in (dense_a, dense_1, dense_2):
        assert np.abs(matrix.sum(axis=0)).max() <= 1e-13
    assert np.abs(dense_1 + dense_2 - dense_a).max() <= 1e-14


def test_off_diagonals_non_negative_in_positivity_regime():
    rng = np.random.default_rng(4)
    a1, a2 = assemble_split(_random_drift(rng, 12, 9, scale=2.0))
    assert a1.min_off_diagonal() >= 0.0
    assert a2.min_off_diagonal() >= 0.0
    assert combine(a1, a2).min_off_diagonal() >= 0.0


def test_large_drift_is_reported(caplog):
    d = DriftField(np.full((1, 1), 3.0), np.zeros((0, 2)))
    with caplog.at_level("WARNING"):
        a1, _ = assemble_split(d)
    assert "exceeds 2/h" in caplog.text
    assert a1.min_off_diagonal() < 0.0


# --- pr_stability_bound ---


def test_pr_bound_zero_drift():
    a1, a2 = assemble_split(DriftField.zeros(9, 9))
    assert pr_stability_bound(a1, a2) == 1.0


def test_pr_bound_two_pixel_example():
    a1, a2 = assemble_split(drift_from_reference(PositiveImage(np.array([[1.0, 3.0]]))))
    assert pr_stability_bound(a1, a2) == pytest.approx(4.0 / 3.0)


def test_pr_bound_scales_with_spacing():
    a1, a2 = assemble_split(DriftField.zeros(9, 9, h=0.5))
    assert pr_stability_bound(a1, a2) == pytest.approx(0.25)


def test_pr_bound_single_pixel_is_infinite():
    a1, a2 = assemble_split(DriftField.zeros(1, 1))
    assert math.isinf(pr_stability_bound(a1, a2))
