"""Application workflows: reflectance calibration, shadow removal and mosaic light balance."""

import logging
from typing import Dict, Tuple

import numpy as np

from core import EdgeMask, FrameLayout, OsmosisError, PositiveImage, ShapeMismatchError, validate_layout
from discretize import drift_from_reference, zero_drift_on_mask
from integrators import DiagnosticsTrace, SchemeConfig, evolve

logger = logging.getLogger(__name__)


class CalibrationError(OsmosisError, ValueError):
    """Raised for unusable calibration constants or raw data."""


def calibrate_reflectance(u_raw: np.ndarray, u_ref: float, r_ref: float) -> np.ndarray:
    """
    Convert a raw radiometric image into reflectance with an in-scene target.

    Args:
        u_raw: Non-negative raw values, any shape.
        u_ref: Averaged raw response of the calibration target (> 0).
        r_ref: Certified reflectance of the target, in (0, 1].

    Returns:
        Pointwise ``u_raw / u_ref * r_ref``. Values above 1 are kept and logged.

    Raises:
        CalibrationError: If a constant is out of range or ``u_raw`` is negative somewhere.
    """
    if not u_ref > 0:
        raise CalibrationError(f"Target response u_ref must be positive, got {u_ref}.")
    if not 0 < r_ref <= 1:
        raise CalibrationError(f"Target reflectance r_ref must lie in (0, 1], got {r_ref}.")
    u_raw = np.asarray(u_raw, dtype=np.float64)
    if np.any(u_raw < 0):
        raise CalibrationError("Raw radiometric data contains negative values.")

    r = (u_raw / u_ref) * r_ref
    above = int(np.count_nonzero(r > 1.0))
    if above:
        logger.warning("%d pixel(s) have reflectance above 1 (max %.4g).", above, float(r.max()))
    return r


def seam_mask_from_layout(layout: FrameLayout, width: int, height: int) -> EdgeMask:
    """Mask the interior half-edges whose two pixels belong to different frames."""
    labels = layout.label_map(width, height)
    m1 = labels[:, 1:] != labels[:, :-1]
    m2 = labels[1:, :] != labels[:-1, :]
    return EdgeMask(m1, m2)


def edge_mask_from_region(region: np.ndarray) -> EdgeMask:
    """Perimeter edges of a boolean pixel region (edges with one end inside and one outside)."""
    region = np.asarray(region, dtype=bool)
    if region.ndim != 2:
        raise ShapeMismatchError("Region mask must be 2-D", expected=(-1, -1), actual=region.shape)
    return EdgeMask(region[:, 1:] != region[:, :-1], region[1:, :] != region[:-1, :])


def frame_gains(u: np.ndarray, f: np.ndarray, layout: FrameLayout) -> Dict[str, float]:
    """Per-frame light coefficient ``mean(u) / mean(f)`` over each frame."""
    gains = {}
    for frame in layout:
        window = (slice(frame.y0, frame.y1), slice(frame.x0, frame.x1))
        gains[frame.frame_id] = float(u[window].mean() / f[window].mean())
    return gains


def _evolve_with_mask(f: PositiveImage, mask: EdgeMask, cfg: SchemeConfig) -> Tuple[np.ndarray, DiagnosticsTrace]:
    mask.check_grid(f.width, f.height)
    d = zero_drift_on_mask(drift_from_reference(f), mask)
    return evolve(f, d, cfg)


def balance_mosaic(f: PositiveImage, layout: FrameLayout, cfg: SchemeConfig) -> Tuple[np.ndarray, DiagnosticsTrace]:
    """
    Even out the light coefficient between the frames of a mosaic.

    The drift is taken from ``f`` itself and zeroed on every seam edge, so the
    evolution removes the brightness jumps between frames while keeping the
    detail inside each frame. The mean of ``f`` is preserved.
    """
    validate_layout(layout, f.width, f.height)
    mask = seam_mask_from_layout(layout, f.width, f.height)
    logger.info("Balancing %d frame(s) across %d seam edge(s).", len(layout), mask.count())
    u, trace = _evolve_with_mask(f, mask, cfg)
    for frame_id, gain in frame_gains(u, f.data, layout).items():
        logger.info("Frame %s: light coefficient %.4f", frame_id, gain)
    return u, trace


def remove_shadow(f: PositiveImage, boundary: EdgeMask, cfg: SchemeConfig) -> Tuple[np.ndarray, DiagnosticsTrace]:
    """Remove a shadow whose perimeter edges are given by ``boundary``."""
    logger.info("Removing shadow bounded by %d edge(s).", boundary.count())
    return _evolve_with_mask(f, boundary, cfg)
