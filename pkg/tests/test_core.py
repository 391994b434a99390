import unittest

import numpy as np
import pytest

from core import (
    DriftField,
    EdgeMask,
    Frame,
    FrameLayout,
    LayoutCoverageError,
    LayoutError,
    LayoutOverlapError,
    NonPositiveImageError,
    PositiveImage,
    ShapeMismatchError,
    validate_layout,
)


# --- PositiveImage ---


def test_positive_image_records_floor_and_shape():
    img = PositiveImage(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert (img.width, img.height) == (3, 2)
    assert img.eps_min == 1.0
    assert img.h == 1.0
    assert img.mean() == pytest.approx(3.5)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
def test_positive_image_rejects_non_positive_or_non_finite(bad):
    with pytest.raises(NonPositiveImageError):
        PositiveImage(np.array([[1.0, bad]]))


def test_positive_image_rejects_values_below_floor():
    with pytest.raises(NonPositiveImageError):
        PositiveImage(np.array([[0.5, 2.0]]), eps_min=1.0)


def test_positive_image_rejects_wrong_dimensions_and_spacing():
    with pytest.raises(ShapeMismatchError):
        PositiveImage(np.ones(4))
    with pytest.raises(ShapeMismatchError):
        PositiveImage(np.ones((0, 3)))
    with pytest.raises(ValueError):
        PositiveImage(np.ones((2, 2)), h=0.0)


def test_positive_image_is_immutable_and_detached():
    source = np.ones((2, 2))
    img = PositiveImage(source)
    source[0, 0] = 7.0
    assert img.data[0, 0] == 1.0
    with pytest.raises(ValueError):
        img.data[0, 0] = 2.0


# --- DriftField and EdgeMask ---


def test_drift_field_zeros_has_edge_shapes():
    d = DriftField.zeros(width=5, height=3)
    assert d.d1.shape == (3, 4)
    assert d.d2.shape == (2, 5)
    assert (d.width, d.height) == (5, 3)
    assert d.max_abs() == 0.0


def test_drift_field_single_pixel_has_no_edges():
    d = DriftField.zeros(width=1, height=1)
    assert d.d1.size == 0 and d.d2.size == 0
    assert d.max_abs() == 0.0


def test_drift_field_rejects_inconsistent_components():
    with pytest.raises(ShapeMismatchError):
        DriftField(np.zeros((3, 4)), np.zeros((3, 5)))


def test_drift_field_rejects_non_finite():
    d1 = np.zeros((2, 1))
    d1[0, 0] = np.nan
    with pytest.raises(ValueError):
        DriftField(d1, np.zeros((1, 2)))


def test_drift_check_grid():
    d = DriftField.zeros(width=4, height=4)
    d.check_grid(4, 4)
    with pytest.raises(ShapeMismatchError):
        d.check_grid(4, 5)


def test_edge_mask_counts_and_checks_grid():
    mask = EdgeMask.empty(width=3, height=2)
    assert mask.count() == 0
    full = EdgeMask(np.ones((2, 2), dtype=bool), np.ones((1, 3), dtype=bool))
    assert full.count() == 7
    with pytest.raises(ShapeMismatchError):
        full.check_grid(2, 3)


# --- Layouts ---


def _halves(width=4, height=4):
    half = width // 2
    return FrameLayout((Frame("left", 0, 0, half, height), Frame("right", half, 0, width - half, height)))


class TestValidateLayout(unittest.TestCase):
    def test_single_rectangle_is_valid(self):
        validate_layout(FrameLayout.single(6, 5), 6, 5)

    def test_side_by_side_halves_are_valid(self):
        validate_layout(_halves(), 4, 4)

    def test_overlap_names_both_frames_and_pixel(self):
        layout = FrameLayout((Frame("a", 0, 0, 3, 4), Frame("b", 2, 0, 2, 4)))
        with self.assertRaises(LayoutOverlapError) as ctx:
            validate_layout(layout, 4, 4)
        self.assertEqual(ctx.exception.frame_ids, ("a", "b"))
        self.assertEqual(ctx.exception.pixel, (2, 0))
        self.assertIn("'a'", str(ctx.exception))
        self.assertIn("'b'", str(ctx.exception))

    def test_gap_is_a_coverage_error(self):
        layout = FrameLayout((Frame("a", 0, 0, 2, 4), Frame("b", 3, 0, 1, 4)))
        with self.assertRaises(LayoutCoverageError) as ctx:
            validate_layout(layout, 4, 4)
        self.assertEqual(ctx.exception.pixel, (2, 0))

    def test_frame_outside_canvas(self):
        layout = FrameLayout((Frame("a", 0, 0, 5, 4),))
        with self.assertRaises(LayoutError) as ctx:
            validate_layout(layout, 4, 4)
        self.assertEqual(ctx.exception.frame_ids, ("a",))

    def test_duplicate_ids_and_empty_layout(self):
        with self.assertRaises(LayoutError):
            validate_layout(FrameLayout(), 4, 4)
        layout = FrameLayout((Frame("a", 0, 0, 2, 4), Frame("a", 2, 0, 2, 4)))
        with self.assertRaises(LayoutError):
            validate_layout(layout, 4, 4)


def test_layout_json_round_trip_and_labels():
    layout = _halves()
    parsed = FrameLayout.from_json(layout.to_json())
    assert parsed == layout
    labels = parsed.label_map(4, 4)
    assert (labels[:, :2] == 0).all() and (labels[:, 2:] == 1).all()


def test_layout_json_errors():
    with pytest.raises(LayoutError):
        FrameLayout.from_json("{not json")
    with pytest.raises(LayoutError):
        FrameLayout.from_json('[{"id": "a", "x0": 0, "y0": 0, "width": 2}]')
    with pytest.raises(LayoutError):
        FrameLayout.from_json('{"id": "a"}')
    with pytest.raises(LayoutError):
        FrameLayout.from_json('[{"id": "a", "x0": 0, "y0": 0, "width": 2, "height": true}]')


@pytest.mark.parametrize("value", ["2.9", "2.0", "true", '"2"', "null"])
def test_layout_json_rejects_non_integer_coordinates(value):
    text = (
        '[{"id": "a", "x0": 0, "y0": 0, "width": %s, "height": 4},'
        ' {"id": "b", "x0": 2, "y0": 0, "width": 2, "height": 4}]' % value
    )
    with pytest.raises(LayoutError) as exc:
        FrameLayout.from_json(text)
    assert "'width'" in str(exc.value)
    assert exc.value.frame_ids == ("a",)
