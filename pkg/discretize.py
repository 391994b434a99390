"""Drift fields and the full / split discrete osmosis operators.

Every interior edge between a lower-index pixel ``p`` and a higher-index pixel
``q`` with drift ``d`` contributes

* ``1/h² - d/(2h)`` as the weight of ``u[q]`` in row ``p``,
* ``1/h² + d/(2h)`` as the weight of ``u[p]`` in row ``q``,
* minus those same two numbers to the diagonals of ``q`` and ``p``
  respectively, so every column of the operator sums to zero.

Boundary edges contribute nothing. The full operator is the entrywise sum of
the horizontal and vertical parts, so ``A = A1 + A2`` holds exactly.
"""

import logging
import math
from typing import Tuple

import numpy as np

from core import DriftField, EdgeMask, OperatorKind, PositiveImage, StencilOperator

logger = logging.getLogger(__name__)


def drift_from_reference(v: PositiveImage) -> DriftField:
    """
    Build the drift whose steady state is a rescaled ``v``.

    The half-edge sample ``2 (v_q - v_p) / (h (v_q + v_p))`` approximates the
    gradient of ``ln v`` and makes ``v`` an exact discrete steady state.
    """
    data, h = v.data, v.h
    d1 = 2.0 * (data[:, 1:] - data[:, :-1]) / (h * (data[:, 1:] + data[:, :-1]))
    d2 = 2.0 * (data[1:, :] - data[:-1, :]) / (h * (data[1:, :] + data[:-1, :]))
    return DriftField(d1, d2, h)


def zero_drift_on_mask(d: DriftField, m: EdgeMask) -> DriftField:
    """Return ``d`` with every masked edge set to exactly zero."""
    m.check_grid(d.width, d.height)
    d1 = np.where(m.m1, 0.0, d.d1)
    d2 = np.where(m.m2, 0.0, d.d2)
    logger.debug("Zeroed drift on %d of %d edges.", m.count(), d.d1.size + d.d2.size)
    return DriftField(d1, d2, d.h)


def _edge_weights(drift: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    inv_h2 = 1.0 / (h * h)
    half = drift / (2.0 * h)
    return inv_h2 - half, inv_h2 + half


def _assemble_horizontal(d: DriftField) -> StencilOperator:
    shape = (d.height, d.width)
    to_higher, to_lower = _edge_weights(d.d1, d.h)
    wC = np.zeros(shape)
    wE = np.zeros(shape)
    wW = np.zeros(shape)
    wE[:, :-1] = to_higher
    wW[:, 1:] = to_lower
    wC[:, :-1] -= to_lower
    wC[:, 1:] -= to_higher
    zero = np.zeros(shape)
    return StencilOperator(wC, wE, wW, zero, zero, OperatorKind.HORIZONTAL, d.h)


def _assemble_vertical(d: DriftField) -> StencilOperator:
    shape = (d.height, d.width)
    to_higher, to_lower = _edge_weights(d.d2, d.h)
    wC = np.zeros(shape)
    wS = np.zeros(shape)
    wN = np.zeros(shape)
    wS[:-1, :] = to_higher
    wN[1:, :] = to_lower
    wC[:-1, :] -= to_lower
    wC[1:, :] -= to_higher
    zero = np.zeros(shape)
    return StencilOperator(wC, zero, zero, wN, wS, OperatorKind.VERTICAL, d.h)


def assemble_split(d: DriftField) -> Tuple[StencilOperator, StencilOperator]:
    """Return the horizontal part ``A1`` and the vertical part ``A2`` of the operator."""
    a1 = _assemble_horizontal(d)
    a2 = _assemble_vertical(d)
    if d.max_abs() * d.h > 2.0:
        logger.warning(
            "Drift magnitude %.3g exceeds 2/h; off-diagonal weights go negative and positivity is not guaranteed.",
            d.max_abs(),
        )
    return a1, a2


def combine(a1: StencilOperator, a2: StencilOperator) -> StencilOperator:
    """Entrywise sum of a horizontal and a vertical operator."""
    return StencilOperator(
        a1.wC + a2.wC,
        a1.wE + a2.wE,
        a1.wW + a2.wW,
        a1.wN + a2.wN,
        a1.wS + a2.wS,
        OperatorKind.FULL,
        a1.h,
    )


def assemble_full(d: DriftField) -> StencilOperator:
    """Return the 5-point osmosis operator ``A`` for drift ``d``."""
    return combine(*assemble_split(d))


def pr_stability_bound(a1: StencilOperator, a2: StencilOperator) -> float:
    """
    Largest time step for which Peaceman-Rachford keeps the osmosis properties.

    Returns ``2 / max(max|diag A1|, max|diag A2|)``, or infinity for an
    operator without edges.
    """
    largest = max(a1.max_abs_diagonal(), a2.max_abs_diagonal())
    if largest == 0.0:
        return math.inf
    return 2.0 / largest
