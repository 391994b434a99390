"""Banded linear algebra for the implicit osmosis steps.

The split operators are tridiagonal once the unknowns are ordered along their
own direction: rows for the horizontal part, columns for the vertical part.
Vertical systems are therefore solved on a transposed, contiguous copy of the
field, which is the bandwidth-one permutation of the 2-D problem.

The full (non-split) operator is penta-diagonal and is factored with a sparse
LU instead.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import threading
from typing import List, Optional

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse import linalg as splinalg

from config import DENSE_ORACLE_MAX_PIXELS
from core import OperatorKind, OsmosisError, ShapeMismatchError, StencilOperator

logger = logging.getLogger(__name__)


class ZeroPivotError(OsmosisError, RuntimeError):
    """Raised when a tridiagonal line system has a vanishing pivot."""

    def __init__(self, message: str, *, line: int, position: int):
        super().__init__(message)
        self.line = line
        self.position = position


class GridTooLargeError(OsmosisError, ValueError):
    """Raised when a dense oracle is asked for a grid above its guard rail."""

    def __init__(self, message: str, *, pixels: int, limit: int):
        super().__init__(message)
        self.pixels = pixels
        self.limit = limit


# --- Compiled kernels ---
# Arrays are laid out as (n_lines, line_length); every line is contiguous.


@njit(cache=True, nogil=True, error_model="numpy")
def _thomas_factor(lower, diag, upper, cprime, denom):
    n_lines, n = diag.shape
    for line in range(n_lines):
        denom[line, 0] = diag[line, 0]
        cprime[line, 0] = upper[line, 0] / diag[line, 0]
        for k in range(1, n):
            m = diag[line, k] - lower[line, k] * cprime[line, k - 1]
            denom[line, k] = m
            cprime[line, k] = upper[line, k] / m


@njit(cache=True, nogil=True, error_model="numpy")
def _thomas_solve(lower, cprime, denom, rhs, out):
    n_lines, n = rhs.shape
    for line in range(n_lines):
        out[line, 0] = rhs[line, 0] / denom[line, 0]
        for k in range(1, n):
            out[line, k] = (rhs[line, k] - lower[line, k] * out[line, k - 1]) / denom[line, k]
        for k in range(n - 2, -1, -1):
            out[line, k] -= cprime[line, k] * out[line, k + 1]


# --- Worker pool for line chunks ---

_pool_lock = threading.Lock()
_pool: Optional[ThreadPoolExecutor] = None
_workers = 1


def configure_threads(workers: int) -> None:
    """Cap the number of threads that share the line solves of one call."""
    global _pool, _workers
    workers = max(1, int(workers))
    with _pool_lock:
        if workers == _workers:
            return
        if _pool is not None:
            _pool.shutdown(wait=True)
            _pool = None
        _workers = workers
    logger.info("Line solves will use up to %d thread(s).", workers)


def _executor() -> ThreadPoolExecutor:
    global _pool
    with _pool_lock:
        if _pool is None:
            _pool = ThreadPoolExecutor(max_workers=_workers, thread_name_prefix="osmofilt-lines")
        return _pool


def _chunks(n_lines: int) -> List[slice]:
    count = min(_workers, n_lines)
    bounds = np.linspace(0, n_lines, count + 1).astype(int)
    return [slice(bounds[k], bounds[k + 1]) for k in range(count)]


@dataclass(frozen=True, eq=False)
class TridiagonalFactor:
    """LU factors of ``I - scale * A_n`` for every grid line of one split operator.

    ``lower``, ``cprime`` and ``denom`` have shape ``(n_lines, line_length)``:
    rows of the grid for a horizontal operator, columns for a vertical one.
    A factor is only valid for the operator and ``scale`` it was built from.
    """

    kind: OperatorKind
    scale: float
    lower: np.ndarray
    cprime: np.ndarray
    denom: np.ndarray

    @property
    def grid_shape(self):
        if self.kind is OperatorKind.HORIZONTAL:
            return self.denom.shape
        return self.denom.shape[::-1]


def _line_bands(op: StencilOperator, scale: float):
    if op.kind is OperatorKind.HORIZONTAL:
        lower, diag, upper = op.wW, op.wC, op.wE
    elif op.kind is OperatorKind.VERTICAL:
        lower, diag, upper = op.wN.T, op.wC.T, op.wS.T
    else:
        raise ValueError("Only horizontal or vertical operators are tridiagonal; got a full operator.")
    return (
        np.ascontiguousarray(-scale * lower),
        np.ascontiguousarray(1.0 - scale * diag),
        np.ascontiguousarray(-scale * upper),
    )


def factor(op: StencilOperator, scale: float) -> TridiagonalFactor:
    """
    Factor ``I - scale * A_n`` line by line (Thomas algorithm, no pivoting).

    Args:
        op: A horizontal-only or vertical-only operator.
        scale: The scaled step ``sigma * tau`` (must be positive).

    Raises:
        ZeroPivotError: If a pivot vanishes or overflows on some line. This
            cannot happen while the off-diagonal weights are non-negative.
    """
    if not scale > 0:
        raise ValueError(f"Scaled time step must be positive, got {scale}.")
    lower, diag, upper = _line_bands(op, scale)
    cprime = np.empty_like(diag)
    denom = np.empty_like(diag)
    _thomas_factor(lower, diag, upper, cprime, denom)

    bad = (denom == 0.0) | ~np.isfinite(denom) | ~np.isfinite(cprime)
    if bad.any():
        line, position = (int(x) for x in np.argwhere(bad)[0])
        raise ZeroPivotError(
            f"Zero pivot in {op.kind.value} line {line} at position {position} (scale={scale:g}).",
            line=line,
            position=position,
        )
    for array in (lower, cprime, denom):
        array.setflags(write=False)
    return TridiagonalFactor(op.kind, float(scale), lower, cprime, denom)


def solve(f: TridiagonalFactor, rhs: np.ndarray) -> np.ndarray:
    """
    Solve ``(I - scale * A_n) x = rhs`` for a field ``rhs`` on the factored grid.

    Each call owns its work buffers; the factor is only read.
    """
    if rhs.shape != f.grid_shape:
        raise ShapeMismatchError("Right-hand side does not match the factored grid", expected=f.grid_shape, actual=rhs.shape)

    if f.kind is OperatorKind.HORIZONTAL:
        lines = np.ascontiguousarray(rhs, dtype=np.float64)
    else:
        lines = np.ascontiguousarray(rhs.T, dtype=np.float64)
    out = np.empty_like(lines)

    n_lines = lines.shape[0]
    if _workers == 1 or n_lines < 2:
        _thomas_solve(f.lower, f.cprime, f.denom, lines, out)
    else:
        futures = [
            _executor().submit(_thomas_solve, f.lower[s], f.cprime[s], f.denom[s], lines[s], out[s])
            for s in _chunks(n_lines)
        ]
        for future in futures:
            future.result()

    if f.kind is OperatorKind.HORIZONTAL:
        return out
    return out.T


# --- Full penta-diagonal operator ---


def sparse_matrix(op: StencilOperator) -> sparse.csc_matrix:
    """Assemble ``op`` as a sparse matrix over the row-major pixel ordering."""
    width = op.width
    n = op.wC.size
    diagonals = [op.wC.ravel()]
    offsets = [0]
    for band, offset in (
        (op.wE.ravel()[:-1], 1),
        (op.wW.ravel()[1:], -1),
        (op.wS.ravel()[: n - width], width),
        (op.wN.ravel()[width:], -width),
    ):
        if band.size and np.any(band):
            diagonals.append(band)
            offsets.append(offset)
    return sparse.diags(diagonals, offsets, shape=(n, n), format="csc")


@dataclass(frozen=True, eq=False)
class FullFactor:
    """Sparse LU of ``I - scale * A`` for the penta-diagonal operator."""

    scale: float
    shape: tuple
    lu: object

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if rhs.shape != self.shape:
            raise ShapeMismatchError("Right-hand side does not match the factored grid", expected=self.shape, actual=rhs.shape)
        return self.lu.solve(np.ascontiguousarray(rhs, dtype=np.float64).ravel()).reshape(self.shape)


def factor_full(op: StencilOperator, scale: float) -> FullFactor:
    """Sparse LU factorisation of ``I - scale * A``; reusable while ``scale`` is unchanged."""
    if not scale > 0:
        raise ValueError(f"Scaled time step must be positive, got {scale}.")
    n = op.wC.size
    system = sparse.identity(n, format="csc") - scale * sparse_matrix(op)
    try:
        lu = splinalg.splu(system.tocsc())
    except RuntimeError as e:
        raise ZeroPivotError(f"Sparse LU of the full operator failed: {e}", line=-1, position=-1) from e
    logger.debug("Factored full operator with %d unknowns (scale=%g).", n, scale)
    return FullFactor(float(scale), op.shape, lu)


# --- Dense oracles ---


def _check_guard(pixels: int) -> None:
    if pixels > DENSE_ORACLE_MAX_PIXELS:
        raise GridTooLargeError(
            f"Dense oracle refuses {pixels} pixels (limit {DENSE_ORACLE_MAX_PIXELS}).",
            pixels=pixels,
            limit=DENSE_ORACLE_MAX_PIXELS,
        )


def dense_matrix(op: StencilOperator) -> np.ndarray:
    """Dense matrix of ``op`` over the row-major pixel ordering (small grids only)."""
    height, width = op.shape
    n = height * width
    _check_guard(n)
    matrix = np.zeros((n, n))
    for j in range(height):
        for i in range(width):
            k = j * width + i
            matrix[k, k] = op.wC[j, i]
            if i + 1 < width:
                matrix[k, k + 1] = op.wE[j, i]
            if i > 0:
                matrix[k, k - 1] = op.wW[j, i]
            if j + 1 < height:
                matrix[k, k + width] = op.wS[j, i]
            if j > 0:
                matrix[k, k - width] = op.wN[j, i]
    return matrix


def dense_solve_oracle(matrix: np.ndarray, scale: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(I - scale * matrix) x = rhs`` by dense elimination."""
    n = matrix.shape[0]
    _check_guard(n)
    if rhs.size != n:
        raise ShapeMismatchError("Right-hand side does not match the matrix", expected=(n,), actual=rhs.shape)
    x = np.linalg.solve(np.eye(n) - scale * matrix, rhs.ravel())
    return x.reshape(rhs.shape)
