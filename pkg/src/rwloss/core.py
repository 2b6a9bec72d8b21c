"""Grid and field containers, one-hot encoding and the RWG file format.

Every N x K field is stored flat and row-major with the class (channel) index
varying fastest, so ``values[i]`` is the K-vector of pixel ``i``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"RWGRID"
VERSION = 1
CODE_U8, CODE_F32, CODE_F64 = 0, 1, 2
_CODE_DTYPES = {CODE_U8: np.dtype("<u1"), CODE_F32: np.dtype("<f4"), CODE_F64: np.dtype("<f8")}
_HEADER = struct.Struct("<6sBBII")


class FormatError(ValueError):
    """Malformed file header or unsupported layout."""


class CorruptionError(FormatError):
    """Header is valid but the payload does not match it."""


class DomainError(ValueError):
    """A value lies outside its admissible domain."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (1, 2, 3) or any(d <= 0 for d in dims):
        raise DomainError(f"dims must hold 1-3 positive extents, got {dims}")
    return dims


def _check_spacing(spacing, ndim: int) -> tuple[float, ...]:
    if spacing is None:
        return (1.0,) * ndim
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != ndim:
        raise DomainError(f"spacing has {len(spacing)} entries for {ndim} dims")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise DomainError(f"spacing must be strictly positive, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Integer class label per voxel on a 2D/3D grid (1D rows are accepted too)."""

    dims: tuple[int, ...]
    labels: np.ndarray
    num_classes: int
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = _check_dims(self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing, len(dims)))
        k = int(self.num_classes)
        if not 1 <= k <= 255:
            raise DomainError(f"num_classes must be in [1, 255], got {k}")
        object.__setattr__(self, "num_classes", k)
        raw = np.asarray(self.labels).reshape(-1)
        if raw.size != int(np.prod(dims)):
            raise CorruptionError(f"{raw.size} labels for dims {dims}")
        if raw.size and (raw.min() < 0 or raw.max() >= k):
            raise DomainError(f"labels must lie in [0, {k}), got range [{raw.min()}, {raw.max()}]")
        if raw.dtype.kind == "f" and not np.all(raw == np.round(raw)):
            raise DomainError("labels must be integers")
        object.__setattr__(self, "labels", _freeze(raw.astype(np.uint8)))

    @classmethod
    def from_array(cls, arr, num_classes: int | None = None, spacing=None) -> "LabelGrid":
        arr = np.asarray(arr)
        if num_classes is None:
            num_classes = int(arr.max()) + 1
        return cls(arr.shape, arr.reshape(-1), num_classes, spacing)

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def as_array(self) -> np.ndarray:
        return self.labels.reshape(self.dims)

    def mask(self, k: int) -> np.ndarray:
        """Boolean spatial mask of class ``k``."""
        return self.as_array() == k


@dataclass(frozen=True, eq=False)
class Field:
    """N x K real-valued per-pixel class scores."""

    dims: tuple[int, ...]
    values: np.ndarray
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = _check_dims(self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing, len(dims)))
        vals = np.asarray(self.values)
        if vals.dtype.kind not in "fiub":
            raise DomainError(f"field values must be numeric, got {vals.dtype}")
        n = int(np.prod(dims))
        if vals.ndim != 2 or vals.shape[0] != n:
            raise CorruptionError(f"values of shape {vals.shape} do not fit dims {dims}")
        if vals.dtype.kind != "f":
            vals = vals.astype(np.float64)
        object.__setattr__(self, "values", _freeze(vals))
        self._validate()

    def _validate(self):
        pass

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[1])

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def channel(self, k: int) -> np.ndarray:
        """Channel ``k`` reshaped to the spatial dims."""
        return self.values[:, k].reshape(self.dims)


class OneHot(Field):
    def _validate(self):
        v = self.values
        if not np.all((v == 0) | (v == 1)) or not np.all(v.sum(axis=1) == 1):
            raise DomainError("one-hot rows must contain a single 1")

    def labels(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)


class LogitField(Field):
    def _validate(self):
        if not np.all(np.isfinite(self.values)):
            raise DomainError("logits must be finite")


class ProbField(Field):
    def _validate(self):
        v = self.values
        if np.any(v < 0) or np.any(v > 1) or not np.allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise DomainError("probability rows must lie in [0, 1] and sum to 1")


class RWMap(Field):
    def _validate(self):
        if not np.all(np.isfinite(self.values)):
            raise DomainError("RW map entries must be finite")


def one_hot(grid: LabelGrid) -> OneHot:
    values = np.zeros((grid.size, grid.num_classes), dtype=np.float64)
    values[np.arange(grid.size), grid.labels] = 1.0
    return OneHot(grid.dims, values, grid.spacing)


def values_of(x) -> np.ndarray:
    """Return the raw N x K array of a Field or array-like."""
    if isinstance(x, Field):
        return x.values
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# RWG binary format and the 2D text format for labels


def write_grid(path, value: LabelGrid | Field, dtype: str | None = None) -> None:
    """Write a LabelGrid (u8 payload) or Field (f64 by default, or ``dtype="f32"``)."""
    if isinstance(value, LabelGrid):
        code, channels = CODE_U8, 0
        payload = value.labels
    elif isinstance(value, Field):
        channels = value.num_classes
        if dtype is None:
            code = CODE_F32 if value.values.dtype == np.float32 else CODE_F64
        else:
            code = {"f32": CODE_F32, "f64": CODE_F64}[dtype]
        payload = value.values
    else:
        raise TypeError(f"cannot serialise {type(value).__name__}")
    if len(value.dims) not in (2, 3):
        raise FormatError("RWG files hold 2D or 3D grids only")
    ndim = len(value.dims)
    parts = [
        _HEADER.pack(MAGIC, VERSION, code, ndim, channels),
        struct.pack(f"<{ndim}I", *value.dims),
        struct.pack(f"<{ndim}f", *value.spacing),
        np.ascontiguousarray(payload, dtype=_CODE_DTYPES[code]).tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def _parse_rwg(data: bytes, num_classes: int | None):
    if len(data) < _HEADER.size:
        raise FormatError("file too short for an RWG header")
    magic, version, code, ndim, channels = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RWG version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown element code {code}")
    if ndim not in (2, 3):
        raise FormatError(f"spatial_ndim must be 2 or 3, got {ndim}")
    if (code == CODE_U8) != (channels == 0):
        raise FormatError("u8 payloads are label grids (channels 0); float payloads need channels > 0")
    off = _HEADER.size
    need = off + 8 * ndim
    if len(data) < need:
        raise CorruptionError("header truncated")
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    spacing = struct.unpack_from(f"<{ndim}f", data, off + 4 * ndim)
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims)) * max(channels, 1)
    payload = data[need:]
    if len(payload) != count * dtype.itemsize:
        raise CorruptionError(f"payload holds {len(payload)} bytes, header implies {count * dtype.itemsize}")
    arr = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    if code == CODE_U8:
        k = num_classes if num_classes is not None else int(arr.max()) + 1 if arr.size else 1
        if arr.size and arr.max() >= k:
            raise DomainError(f"label {arr.max()} >= num_classes {k}")
        return LabelGrid(dims, arr, k, spacing)
    return Field(dims, arr.reshape(-1, channels), spacing)


def _parse_text(text: str, spacing) -> LabelGrid:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty text grid")
    try:
        h, w, k = (int(t) for t in lines[0].split())
        rows = [[int(t) for t in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"malformed text grid: {exc}") from None
    if len(rows) != h or any(len(r) != w for r in rows):
        raise CorruptionError(f"text grid body does not match header {h}x{w}")
    arr = np.array(rows, dtype=np.int64).reshape(h, w)
    if arr.size and (arr.min() < 0 or arr.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    return LabelGrid((h, w), arr.reshape(-1), k, spacing)


def read_grid(path, num_classes: int | None = None, spacing: Sequence[float] | None = None):
    """Read an RWG file or a 2D text label grid.

    RWG label grids do not store K, so it is taken from ``num_classes`` or
    inferred as ``max(label) + 1``. ``spacing`` only applies to text grids.
    """
    data = Path(path).read_bytes()
    if data.startswith(MAGIC):
        return _parse_rwg(data, num_classes)
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither RWG nor text grid") from None
    return _parse_text(text, spacing)


def write_text_grid(path, grid: LabelGrid) -> None:
    if grid.ndim != 2:
        raise FormatError("text grids are 2D")
    h, w = grid.dims
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in grid.as_array())
    Path(path).write_text(f"{h} {w} {grid.num_classes}\n{body}\n")
