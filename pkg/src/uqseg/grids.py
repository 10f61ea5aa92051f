"""2D field types and their on-disk formats.

Scalar fields hold images, uncertainty maps, gradient maps and distance maps;
label fields hold class indices. Both are immutable after construction and are
stored in a small binary container (magic ``PRGD``). Scalar payloads are f32 on
disk while all in-memory arithmetic stays f64; labels are u8 on disk (C <= 255).
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PRGD"
KIND_SCALAR = 0
KIND_LABEL = 1

# refuse absurd headers instead of trying to allocate them
MAX_DIM = 1 << 20


class GridFormatError(ValueError):
    """Malformed grid file; carries the byte offset of the defect."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _freeze(arr):
    # copy so freezing never flips writability of a caller's buffer
    arr = np.array(arr, order="C", copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarGrid:
    """Real-valued field, row-major, finite everywhere."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"scalar grid must be 2D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar grid contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, ScalarGrid) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.values.shape, self.values.tobytes()))


@dataclass(frozen=True)
class LabelGrid:
    """Class-index field with C classes; every label is strictly below C."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.shape[0] < 1 or lab.shape[1] < 1:
            raise ValueError(f"label grid must be 2D and non-empty, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be integers")
        if self.num_classes < 2 or self.num_classes > 255:
            raise ValueError(f"num_classes must be in [2, 255], got {self.num_classes}")
        if lab.min() < 0 or lab.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "labels", _freeze(lab.astype(np.uint8)))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, LabelGrid)
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.num_classes, self.labels.shape, self.labels.tobytes()))


@dataclass(frozen=True)
class PixelIndex:
    row: int
    col: int

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise ValueError(f"pixel index must be non-negative, got ({self.row}, {self.col})")

    def in_bounds(self, height, width):
        return self.row < height and self.col < width


@dataclass(frozen=True)
class UnitVector2:
    """Unit direction (dy, dx); norm must be 1 within 1e-6."""

    dy: float
    dx: float

    def __post_init__(self):
        norm = self.dy * self.dy + self.dx * self.dx
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"({self.dy}, {self.dx}) is not a unit vector")


def save_grid(grid, path):
    """Write a grid; byte output is a deterministic function of the grid."""
    if isinstance(grid, ScalarGrid):
        kind = KIND_SCALAR
        payload = grid.values.astype("<f4").tobytes()
        h, w = grid.height, grid.width
    elif isinstance(grid, LabelGrid):
        kind = KIND_LABEL
        payload = grid.labels.tobytes()
        h, w = grid.height, grid.width
    else:
        raise TypeError(f"cannot save object of type {type(grid).__name__}")
    header = MAGIC + struct.pack("<BII", kind, h, w)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_grid(path, num_classes=None):
    """Read a grid saved by :func:`save_grid`.

    Label grids do not store their class count; it defaults to ``max label + 1``
    and can be pinned with ``num_classes``.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise GridFormatError("bad magic", 0)
    if len(blob) < 13:
        raise GridFormatError("truncated header", len(blob))
    kind, h, w = struct.unpack("<BII", blob[4:13])
    if kind not in (KIND_SCALAR, KIND_LABEL):
        raise GridFormatError(f"unknown kind byte {kind}", 4)
    if h == 0 or w == 0 or h > MAX_DIM or w > MAX_DIM:
        raise GridFormatError(f"bad dimensions {h}x{w}", 5)
    item = 4 if kind == KIND_SCALAR else 1
    expect = 13 + h * w * item
    if len(blob) != expect:
        raise GridFormatError(
            f"payload has {len(blob) - 13} bytes, expected {expect - 13}", min(len(blob), expect)
        )
    if kind == KIND_SCALAR:
        vals = np.frombuffer(blob, dtype="<f4", count=h * w, offset=13)
        return ScalarGrid(vals.reshape(h, w).astype(np.float64))
    labels = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=13).reshape(h, w)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1, 2)
    return LabelGrid(labels.copy(), num_classes)


def export_pgm(grid, path):
    """Lossy min-max normalized P5 export for eyeballing; never re-imported."""
    if isinstance(grid, LabelGrid):
        v = grid.labels.astype(np.float64)
    else:
        v = grid.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        scaled = (v - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(v)
    data = np.round(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (v.shape[1], v.shape[0]))
        fh.write(data.tobytes())
