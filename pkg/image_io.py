"""Image, layout and diagnostics file I/O.

Supported images:

* PGM, binary ``P5``, maxval 255 or 65535 (16-bit samples are big-endian);
* PNG through Pillow (8-bit grey, 16-bit grey, 8-bit RGB);
* PFM, ``Pf`` (grey) or ``PF`` (colour), float32, little-endian on write,
  scanlines stored bottom to top as the format prescribes.

Loaded images go through the positivity lift ``max(value, eps0)``.
"""

import csv
import logging
import os
import re
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from PIL import Image

from config import FLOAT_LIFT_FRACTION, INTEGER_LIFT
from core import FrameLayout, OsmosisError, PositiveImage
from integrators import TRACE_COLUMNS, DiagnosticsTrace, TraceRow

logger = logging.getLogger(__name__)

FORMATS = ("pgm", "pgm16", "png", "png16", "pfm")
_MAXVAL = {"pgm": 255, "pgm16": 65535, "png": 255, "png16": 65535}

_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


class FileFormatError(OsmosisError, ValueError):
    """Raised when a file cannot be decoded."""

    def __init__(self, message: str, *, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ImageFormatError(FileFormatError):
    """Unsupported or corrupt image file."""


class TraceFormatError(FileFormatError):
    """Diagnostics CSV that does not follow the trace schema."""


class ImageInfo(NamedTuple):
    kind: str  # "pgm", "png" or "pfm"
    width: int
    height: int
    channels: int
    maxval: Optional[int]  # None for float data


def _kind_from_path(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".pnm"):
        return "pgm"
    if ext == ".png":
        return "png"
    if ext == ".pfm":
        return "pfm"
    raise ImageFormatError(f"unsupported extension {ext!r}", path=path)


# --- Decoders ---


def _read_pgm(path: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    match = _PGM_HEADER.match(blob)
    if not match:
        raise ImageFormatError("not a binary (P5) PGM file", path=path)
    width, height, maxval = (int(g) for g in match.groups())
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ImageFormatError(f"bad PGM header {width}x{height} maxval {maxval}", path=path)

    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height
    payload = blob[match.end():]
    if len(payload) < count * dtype.itemsize:
        raise ImageFormatError("truncated PGM pixel data", path=path)
    data = np.frombuffer(payload, dtype=dtype, count=count).reshape(height, width)
    return data.astype(np.float64), ImageInfo("pgm", width, height, 1, maxval)


def _read_pfm(path: str):
    with open(path, "rb") as fh:
        header = fh.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ImageFormatError("not a PFM file", path=path)
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", fh.readline())
        if not dims:
            raise ImageFormatError("malformed PFM dimensions line", path=path)
        width, height = (int(g) for g in dims.groups())
        try:
            scale = float(fh.readline().strip())
        except ValueError as e:
            raise ImageFormatError("malformed PFM scale line", path=path) from e
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        data = np.frombuffer(fh.read(), dtype=endian + "f4")
    if data.size < count:
        raise ImageFormatError("truncated PFM pixel data", path=path)
    shape = (height, width, channels) if channels == 3 else (height, width)
    data = np.flipud(data[:count].reshape(shape))
    return data.astype(np.float64), ImageInfo("pfm", width, height, channels, None)


def _read_png(path: str):
    with open(path, "rb") as fh:
        try:
            with Image.open(fh) as img:
                img.load()
                mode = img.mode
                if mode in ("P", "RGBA", "CMYK", "YCbCr"):
                    img = img.convert("RGB")
                elif mode in ("1", "LA"):
                    img = img.convert("L")
                data = np.array(img)
        except OSError as e:
            raise ImageFormatError(f"cannot decode PNG ({e})", path=path) from e

    if data.dtype == np.uint8:
        maxval: Optional[int] = 255
    elif data.dtype.kind in "ui":
        maxval = 65535
    else:
        maxval = None
    height, width = data.shape[:2]
    channels = 1 if data.ndim == 2 else data.shape[2]
    return data.astype(np.float64), ImageInfo("png", width, height, channels, maxval)


def _decode(path: str):
    kind = _kind_from_path(path)
    if kind == "pgm":
        return _read_pgm(path)
    if kind == "pfm":
        return _read_pfm(path)
    return _read_png(path)


def read_header(path: str) -> ImageInfo:
    """Return the kind, size, channel count and maxval of an image file."""
    return _decode(path)[1]


def read_array(path: str) -> np.ndarray:
    """Decode an image without the positivity lift; ``(H, W)`` or ``(H, W, C)``."""
    return _decode(path)[0]


def default_lift(info: ImageInfo, data: np.ndarray) -> float:
    """``1`` for integer formats, ``1e-6 * max`` for float formats."""
    if info.maxval is not None:
        return INTEGER_LIFT
    peak = float(data.max()) if data.size else 0.0
    return FLOAT_LIFT_FRACTION * peak if peak > 0 else FLOAT_LIFT_FRACTION


def load_channels(path: str, eps0: Optional[float] = None, h: float = 1.0) -> List[PositiveImage]:
    """
    Load an image as one PositiveImage per channel, lifting values below ``eps0``.

    Raises:
        ImageFormatError: For unsupported or corrupt files.
        OSError: If the file cannot be read.
    """
    data, info = _decode(path)
    if not np.all(np.isfinite(data)):
        raise ImageFormatError("image contains non-finite samples", path=path)
    eps = default_lift(info, data) if eps0 is None else float(eps0)
    if not eps > 0:
        raise ValueError(f"Positivity lift must be positive, got {eps}.")

    lifted = int(np.count_nonzero(data < eps))
    if lifted:
        logger.info("Lifted %d sample(s) of %s to %g.", lifted, path, eps)
    data = np.maximum(data, eps)
    planes = [data] if data.ndim == 2 else [data[:, :, c] for c in range(data.shape[2])]
    return [PositiveImage(plane, h=h, eps_min=eps) for plane in planes]


def load_image(path: str, eps0: Optional[float] = None, h: float = 1.0) -> PositiveImage:
    """Load a single-channel image; see load_channels for multi-channel files."""
    channels = load_channels(path, eps0, h)
    if len(channels) != 1:
        raise ImageFormatError(f"expected one channel, found {len(channels)}", path=path)
    return channels[0]


# --- Encoders ---


def _as_array(img: Union[PositiveImage, np.ndarray]) -> np.ndarray:
    return np.asarray(img.data if isinstance(img, PositiveImage) else img, dtype=np.float64)


def _quantise(data: np.ndarray, maxval: int):
    rounded = np.rint(data)
    clamped = int(np.count_nonzero((rounded < 0) | (rounded > maxval) | np.isnan(rounded)))
    out = np.clip(np.nan_to_num(rounded, nan=0.0), 0, maxval)
    return out, clamped


def _write_pgm(path: str, data: np.ndarray, maxval: int) -> int:
    if data.ndim != 2:
        raise ImageFormatError("PGM holds a single channel", path=path)
    values, clamped = _quantise(data, maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (width, height, maxval))
        fh.write(values.astype(dtype).tobytes())
    return clamped


def _write_png(path: str, data: np.ndarray, maxval: int) -> int:
    values, clamped = _quantise(data, maxval)
    if maxval == 255:
        Image.fromarray(values.astype(np.uint8)).save(path, format="PNG")
    elif values.ndim == 2:
        Image.fromarray(values.astype(np.uint16)).save(path, format="PNG")
    else:
        raise ImageFormatError("16-bit PNG output is single channel only", path=path)
    return clamped


def _write_pfm(path: str, data: np.ndarray) -> int:
    if data.ndim == 3 and data.shape[2] != 3:
        raise ImageFormatError("PFM holds one or three channels", path=path)
    header = b"PF\n" if data.ndim == 3 else b"Pf\n"
    height, width = data.shape[:2]
    samples = np.flipud(data).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"%d %d\n" % (width, height))
        fh.write(b"-1.0\n")
        fh.write(samples.tobytes())
    return 0


def format_for(path: str, maxval: Optional[int] = None) -> str:
    """Output format from the extension; 16-bit when ``maxval`` asks for it."""
    kind = _kind_from_path(path)
    if kind != "pfm" and maxval is not None and maxval > 255:
        return kind + "16"
    return kind


def _write(data: np.ndarray, path: str, fmt: Optional[str]) -> int:
    fmt = fmt or format_for(path)
    if fmt not in FORMATS:
        raise ImageFormatError(f"unknown output format {fmt!r}", path=path)
    if fmt == "pfm":
        clamped = _write_pfm(path, data)
    elif fmt.startswith("pgm"):
        clamped = _write_pgm(path, data, _MAXVAL[fmt])
    else:
        clamped = _write_png(path, data, _MAXVAL[fmt])
    if clamped:
        logger.warning("Clamped %d sample(s) to the %s range while writing %s.", clamped, fmt, path)
    return clamped


def save_image(img: Union[PositiveImage, np.ndarray], path: str, fmt: Optional[str] = None) -> int:
    """
    Save one channel to ``path``.

    Integer formats are rounded to nearest and clamped to their range; PFM is
    written as float32.

    Returns:
        The number of samples that had to be clamped.
    """
    return _write(_as_array(img), path, fmt)


def save_channels(channels: Sequence[Union[PositiveImage, np.ndarray]], path: str, fmt: Optional[str] = None) -> int:
    """Save one or three channels as a single image file."""
    planes = [_as_array(c) for c in channels]
    data = planes[0] if len(planes) == 1 else np.stack(planes, axis=-1)
    return _write(data, path, fmt)


# --- Diagnostics ---


def _format_float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def save_trace(trace: DiagnosticsTrace, path: str) -> None:
    """Write the trace as CSV with the fixed header ``iter,t,wall_ms,mean,min,max,rel_change,err``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            writer.writerow([str(row.iter)] + [_format_float(v) for v in row[1:]])


def load_trace(path: str) -> DiagnosticsTrace:
    """Parse a diagnostics CSV written by save_trace."""
    trace = DiagnosticsTrace()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_COLUMNS:
            raise TraceFormatError(f"unexpected header {header}", path=path)
        for line_no, fields in enumerate(reader, start=2):
            if len(fields) != len(TRACE_COLUMNS):
                raise TraceFormatError(f"line {line_no} has {len(fields)} fields", path=path)
            try:
                values = [float(x) for x in fields[1:7]]
                err = float(fields[7]) if fields[7] else None
                trace.append(TraceRow(int(fields[0]), *values, err))
            except ValueError as e:
                raise TraceFormatError(f"line {line_no}: {e}", path=path) from e
    return trace


# --- Layouts ---


def load_layout(path: str) -> FrameLayout:
    """Read a frame layout JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return FrameLayout.from_json(fh.read())


def save_layout(layout: FrameLayout, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(layout.to_json())
