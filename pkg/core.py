"""Domain types shared by every stage of the osmosis filter.

Fields are stored as ``(height, width)`` numpy arrays in row-major order, so
``data[j, i]`` is the pixel in row ``j`` and column ``i``. Drift and masks live
on the interior half-edges between neighbouring pixels:

* ``d1[j, i]`` sits on the vertical edge between ``(j, i)`` and ``(j, i + 1)``,
  shape ``(height, width - 1)``;
* ``d2[j, i]`` sits on the horizontal edge between ``(j, i)`` and ``(j + 1, i)``,
  shape ``(height - 1, width)``.

Boundary half-edges are never stored; they behave as zero drift and zero
diffusive flux.
"""

from dataclasses import dataclass, field
from enum import Enum
import json
import logging
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class OsmosisError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(OsmosisError, ValueError):
    """Raised when a field does not match the grid it is used with."""

    def __init__(self, message: str, *, expected: Tuple[int, ...], actual: Tuple[int, ...]):
        super().__init__(f"{message}: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class NonPositiveImageError(OsmosisError, ValueError):
    """Raised when an image holds a non-finite or non-positive value."""


class LayoutError(OsmosisError, ValueError):
    """Raised when a frame layout does not describe a valid partition."""

    def __init__(self, message: str, *, frame_ids: Sequence[str] = ()):
        super().__init__(message)
        self.frame_ids = tuple(frame_ids)


class LayoutOverlapError(LayoutError):
    """Two frames claim the same mosaic pixel."""

    def __init__(self, message: str, *, frame_ids: Sequence[str], pixel: Tuple[int, int]):
        super().__init__(message, frame_ids=frame_ids)
        self.pixel = pixel


class LayoutCoverageError(LayoutError):
    """A mosaic pixel belongs to no frame."""

    def __init__(self, message: str, *, pixel: Tuple[int, int]):
        super().__init__(message)
        self.pixel = pixel


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PositiveImage:
    """A strictly positive single-channel image on a regular grid.

    ``eps_min`` is the positivity floor the image was built with; every pixel
    is at least that large. Multi-channel images are handled as one instance
    per channel.
    """

    data: np.ndarray
    h: float = 1.0
    eps_min: Optional[float] = None

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeMismatchError(
                "Image data must be a non-empty 2-D array", expected=(-1, -1), actual=data.shape
            )
        if not np.all(np.isfinite(data)):
            raise NonPositiveImageError("Image contains non-finite values.")
        if not self.h > 0:
            raise ValueError(f"Grid spacing must be positive, got {self.h}.")

        eps_min = float(data.min()) if self.eps_min is None else float(self.eps_min)
        if not eps_min > 0:
            raise NonPositiveImageError(f"Positivity floor must be > 0, got {eps_min}.")
        if data.min() < eps_min:
            bad = int(np.count_nonzero(data < eps_min))
            raise NonPositiveImageError(f"{bad} pixel(s) fall below the positivity floor {eps_min}.")

        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "eps_min", eps_min)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def mean(self) -> float:
        return float(self.data.mean())


def edge_shapes(width: int, height: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Shapes of the horizontal-neighbour and vertical-neighbour edge arrays."""
    return (height, width - 1), (height - 1, width)


@dataclass(frozen=True, eq=False)
class DriftField:
    """Drift vector field on the interior half-edges of a grid."""

    d1: np.ndarray
    d2: np.ndarray
    h: float = 1.0

    def __post_init__(self) -> None:
        d1 = np.array(self.d1, dtype=np.float64)
        d2 = np.array(self.d2, dtype=np.float64)
        if d1.ndim != 2 or d2.ndim != 2:
            raise ShapeMismatchError("Drift components must be 2-D", expected=(-1, -1), actual=d1.shape)
        height, width = d1.shape[0], d2.shape[1]
        expected_d1, expected_d2 = edge_shapes(width, height)
        if d1.shape != expected_d1 or d2.shape != expected_d2:
            raise ShapeMismatchError(
                "Drift components disagree on the grid size",
                expected=expected_d1 + expected_d2,
                actual=d1.shape + d2.shape,
            )
        if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
            raise ValueError("Drift field contains non-finite values.")
        object.__setattr__(self, "d1", _frozen(d1))
        object.__setattr__(self, "d2", _frozen(d2))
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def zeros(cls, width: int, height: int, h: float = 1.0) -> "DriftField":
        s1, s2 = edge_shapes(width, height)
        return cls(np.zeros(s1), np.zeros(s2), h)

    @property
    def width(self) -> int:
        return self.d2.shape[1]

    @property
    def height(self) -> int:
        return self.d1.shape[0]

    def max_abs(self) -> float:
        """Largest drift magnitude on any edge (0 for an edgeless grid)."""
        values = [np.abs(a).max() for a in (self.d1, self.d2) if a.size]
        return float(max(values)) if values else 0.0

    def check_grid(self, width: int, height: int) -> None:
        """Raise ShapeMismatchError unless the field belongs to a ``width`` × ``height`` grid."""
        if (self.width, self.height) != (width, height):
            raise ShapeMismatchError(
                "Drift field does not match the image", expected=(height, width), actual=(self.height, self.width)
            )


@dataclass(frozen=True, eq=False)
class EdgeMask:
    """Boolean flag per interior half-edge; ``True`` forces the drift to zero."""

    m1: np.ndarray
    m2: np.ndarray

    def __post_init__(self) -> None:
        m1 = np.array(self.m1, dtype=bool)
        m2 = np.array(self.m2, dtype=bool)
        height, width = m1.shape[0], m2.shape[1]
        expected_m1, expected_m2 = edge_shapes(width, height)
        if m1.shape != expected_m1 or m2.shape != expected_m2:
            raise ShapeMismatchError(
                "Mask components disagree on the grid size",
                expected=expected_m1 + expected_m2,
                actual=m1.shape + m2.shape,
            )
        object.__setattr__(self, "m1", _frozen(m1))
        object.__setattr__(self, "m2", _frozen(m2))

    @classmethod
    def empty(cls, width: int, height: int) -> "EdgeMask":
        s1, s2 = edge_shapes(width, height)
        return cls(np.zeros(s1, dtype=bool), np.zeros(s2, dtype=bool))

    @property
    def width(self) -> int:
        return self.m2.shape[1]

    @property
    def height(self) -> int:
        return self.m1.shape[0]

    def count(self) -> int:
        """Number of masked edges."""
        return int(np.count_nonzero(self.m1) + np.count_nonzero(self.m2))

    def check_grid(self, width: int, height: int) -> None:
        if (self.width, self.height) != (width, height):
            raise ShapeMismatchError(
                "Edge mask does not match the grid", expected=(height, width), actual=(self.height, self.width)
            )


@dataclass(frozen=True)
class Frame:
    """One axis-aligned rectangle of a mosaic, in mosaic pixel coordinates."""

    frame_id: str
    x0: int
    y0: int
    width: int
    height: int

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.frame_id, "x0": self.x0, "y0": self.y0, "width": self.width, "height": self.height}


_FRAME_KEYS = ("x0", "y0", "width", "height")


@dataclass(frozen=True)
class FrameLayout:
    """The frames that tile a mosaic canvas."""

    frames: Tuple[Frame, ...] = field(default_factory=tuple)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def single(cls, width: int, height: int, frame_id: str = "0") -> "FrameLayout":
        return cls((Frame(frame_id, 0, 0, width, height),))

    @classmethod
    def from_json(cls, text: str) -> "FrameLayout":
        """Parse the JSON array form ``[{"id", "x0", "y0", "width", "height"}, ...]``."""
        try:
            entries = json.loads(text)
        except json.JSONDecodeError as e:
            raise LayoutError(f"Layout is not valid JSON: {e}") from e
        if not isinstance(entries, list):
            raise LayoutError("Layout JSON must be an array of frames.")

        frames: List[Frame] = []
        for position, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise LayoutError(f"Layout entry #{position} is not an object.")
            try:
                frame_id = str(entry["id"])
                coords = [entry[key] for key in _FRAME_KEYS]
            except KeyError as e:
                raise LayoutError(f"Layout entry #{position} is missing the {e.args[0]!r} key.") from e
            for key, value in zip(_FRAME_KEYS, coords):
                # bool is an int subclass; 2.0 or "2" are rejected too
                if isinstance(value, bool) or not isinstance(value, int):
                    raise LayoutError(
                        f"Layout entry #{position} has a non-integer {key!r}: {value!r}.", frame_ids=[frame_id]
                    )
            frames.append(Frame(frame_id, *coords))
        return cls(tuple(frames))

    def to_json(self) -> str:
        return json.dumps([frame.to_dict() for frame in self.frames], indent=2)

    def label_map(self, width: int, height: int) -> np.ndarray:
        """Frame index of every canvas pixel; the layout must be valid."""
        validate_layout(self, width, height)
        labels = np.empty((height, width), dtype=np.int64)
        for index, frame in enumerate(self.frames):
            labels[frame.y0:frame.y1, frame.x0:frame.x1] = index
        return labels


def validate_layout(layout: FrameLayout, width: int, height: int) -> None:
    """
    Check that the frames of ``layout`` partition a ``width`` × ``height`` canvas.

    Raises:
        LayoutError: For malformed frames (duplicate ids, empty or out-of-canvas rectangles).
        LayoutOverlapError: If two frames claim the same pixel.
        LayoutCoverageError: If a pixel belongs to no frame.
    """
    if not layout.frames:
        raise LayoutError("Layout has no frames.")

    seen = set()
    for frame in layout.frames:
        if frame.frame_id in seen:
            raise LayoutError(f"Duplicate frame id {frame.frame_id!r}.", frame_ids=[frame.frame_id])
        seen.add(frame.frame_id)
        if frame.width < 1 or frame.height < 1:
            raise LayoutError(f"Frame {frame.frame_id!r} is empty.", frame_ids=[frame.frame_id])
        if frame.x0 < 0 or frame.y0 < 0 or frame.x1 > width or frame.y1 > height:
            raise LayoutError(
                f"Frame {frame.frame_id!r} extends outside the {width}x{height} canvas.",
                frame_ids=[frame.frame_id],
            )

    owner = np.full((height, width), -1, dtype=np.int64)
    for index, frame in enumerate(layout.frames):
        region = owner[frame.y0:frame.y1, frame.x0:frame.x1]
        claimed = region >= 0
        if claimed.any():
            jj, ii = np.argwhere(claimed)[0]
            other = layout.frames[int(region[jj, ii])]
            pixel = (int(frame.x0 + ii), int(frame.y0 + jj))
            raise LayoutOverlapError(
                f"Frames {other.frame_id!r} and {frame.frame_id!r} overlap at pixel (x={pixel[0]}, y={pixel[1]}).",
                frame_ids=[other.frame_id, frame.frame_id],
                pixel=pixel,
            )
        region[...] = index

    orphans = owner < 0
    if orphans.any():
        jj, ii = np.argwhere(orphans)[0]
        pixel = (int(ii), int(jj))
        raise LayoutCoverageError(
            f"{int(orphans.sum())} pixel(s) belong to no frame, first at (x={pixel[0]}, y={pixel[1]}).",
            pixel=pixel,
        )
    logger.debug("Layout with %d frame(s) partitions the %dx%d canvas.", len(layout), width, height)


class OperatorKind(str, Enum):
    """Which edges a stencil operator carries."""

    FULL = "full"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True, eq=False)
class StencilOperator:
    """Discrete osmosis operator stored as per-pixel edge weights.

    Row ``p`` of the operator matrix reads
    ``wC[p] u[p] + wE[p] u[p+x] + wW[p] u[p-x] + wN[p] u[p-y] + wS[p] u[p+y]``
    where ``N`` is the neighbour in the previous row (``j - 1``) and ``S`` the
    neighbour in the next row (``j + 1``). Weights towards absent neighbours
    are exactly zero.
    """

    wC: np.ndarray
    wE: np.ndarray
    wW: np.ndarray
    wN: np.ndarray
    wS: np.ndarray
    kind: OperatorKind
    h: float = 1.0

    def __post_init__(self) -> None:
        shape = np.shape(self.wC)
        for name in ("wC", "wE", "wW", "wN", "wS"):
            weights = np.array(getattr(self, name), dtype=np.float64)
            if weights.shape != shape:
                raise ShapeMismatchError(f"Stencil weight {name} has the wrong shape", expected=shape, actual=weights.shape)
            object.__setattr__(self, name, _frozen(weights))
        object.__setattr__(self, "kind", OperatorKind(self.kind))

    @property
    def width(self) -> int:
        return self.wC.shape[1]

    @property
    def height(self) -> int:
        return self.wC.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.wC.shape

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Return ``A u`` for a field ``u`` of the operator's grid shape."""
        if u.shape != self.shape:
            raise ShapeMismatchError("Field does not match the operator grid", expected=self.shape, actual=u.shape)
        out = self.wC * u
        if self.kind is not OperatorKind.VERTICAL:
            out[:, :-1] += self.wE[:, :-1] * u[:, 1:]
            out[:, 1:] += self.wW[:, 1:] * u[:, :-1]
        if self.kind is not OperatorKind.HORIZONTAL:
            out[:-1, :] += self.wS[:-1, :] * u[1:, :]
            out[1:, :] += self.wN[1:, :] * u[:-1, :]
        return out

    def max_abs_diagonal(self) -> float:
        return float(np.abs(self.wC).max())

    def min_off_diagonal(self) -> float:
        return float(min(self.wE.min(), self.wW.min(), self.wN.min(), self.wS.min()))
