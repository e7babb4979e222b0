"""Shared value types and integer rectangle geometry.

Boxes use an exclusive right/bottom edge: a box ``(x1, y1, x2, y2)`` covers
columns ``x1 .. x2-1`` and rows ``y1 .. y2-1``, so its area is
``(x2 - x1) * (y2 - y1)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class ForensicsError(Exception):
    """Base class for every error raised by the toolkit."""


class DegenerateBox(ForensicsError):
    pass


class ShapeMismatch(ForensicsError):
    pass


class EmptyInput(ForensicsError):
    pass


class Label(str, enum.Enum):
    REAL = "real"
    FAKE = "fake"

    @classmethod
    def parse(cls, value: "str | Label") -> "Label":
        if isinstance(value, Label):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown label {value!r}") from None


class ToolId(str, enum.Enum):
    ELA = "ELA"
    FFT = "FFT"
    NPP = "NPP"
    ZOOM_IN = "zoom_in"

    @classmethod
    def parse(cls, value: "str | ToolId") -> "ToolId":
        if isinstance(value, ToolId):
            return value
        try:
            return _TOOL_ALIASES[_alias_key(value)]
        except KeyError:
            raise KeyError(value) from None


def _alias_key(value) -> str:
    return str(value).replace("-", "").replace("_", "").lower()


_TOOL_ALIASES = {_alias_key(name): tool for tool in ToolId for name in (tool.value, tool.name)}


# fixed order used wherever tools must be enumerated deterministically
TOOL_ORDER = (ToolId.ELA, ToolId.FFT, ToolId.NPP, ToolId.ZOOM_IN)


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if min(self.x1, self.y1) < 0:
            raise DegenerateBox(f"negative coordinate in {self.as_list()}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise DegenerateBox(f"box {self.as_list()} has no area")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_seq(cls, coords) -> "BoundingBox":
        if len(coords) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(coords)}")
        return cls(*coords)


def intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def box_iou_exact(a: BoundingBox, b: BoundingBox) -> Fraction:
    inter = intersection_area(a, b)
    return Fraction(inter, a.area + b.area - inter)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; touching edges give 0."""
    return float(box_iou_exact(a, b))


def clamp_box(b: BoundingBox, w: int, h: int) -> BoundingBox:
    """Clip ``b`` into the ``w x h`` frame, raising DegenerateBox if nothing is left.

    Accepts any object with x1..y2 attributes, so out-of-range boxes coming from
    model output (which cannot be BoundingBox instances) can be clamped too.
    """
    if w < 1 or h < 1:
        raise ValueError("frame dimensions must be >= 1")
    x1 = min(max(b.x1, 0), w)
    y1 = min(max(b.y1, 0), h)
    x2 = min(max(b.x2, 0), w)
    y2 = min(max(b.y2, 0), h)
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBox(f"box {[b.x1, b.y1, b.x2, b.y2]} is empty inside {w}x{h}")
    return BoundingBox(x1, y1, x2, y2)


@dataclass(frozen=True)
class RawBox:
    """Unvalidated rectangle, e.g. a requested crop that may leave the image."""

    x1: int
    y1: int
    x2: int
    y2: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, order="C", copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB image stored as an ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise TypeError(f"expected uint8 pixels, got {px.dtype}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class GrayMap:
    """Single-channel float map with every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D map, got shape {v.shape}")
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("map values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D mask, got shape {v.shape}")
        object.__setattr__(self, "values", _frozen(v.astype(bool, copy=False)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def count(self) -> int:
        return int(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)
