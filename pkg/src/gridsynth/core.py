"""Domain types and bounding-box geometry.

Canonical box representation is corner form (x1, y1, x2, y2) in absolute
pixel coordinates, double precision. Center form and normalized
coordinates exist only at I/O boundaries. Pixel rasters are 8-bit RGB.

All types are immutable after construction; the geometry operations are
pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box, corner form. Degenerate (zero-area) boxes are legal."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"box coordinate {name} is not finite: {v!r}")
            object.__setattr__(self, name, v)
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(
                f"box corners out of order: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Instance:
    """One annotated object: a box plus its category, tied to an image."""

    box: Box2D
    category_id: int
    image_id: int

    def __post_init__(self):
        if self.category_id < 0:
            raise ValueError(f"category_id must be >= 0, got {self.category_id}")


class ImageBuffer:
    """Owned H x W x 3 8-bit raster. Pixels are read-only after construction."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray, *, _copy: bool = True):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected shape (H, W, 3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got dtype {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        if _copy:
            arr = arr.copy()
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def blank(cls, width: int, height: int, fill: int = 114) -> "ImageBuffer":
        """Uniform canvas filled with an 8-bit gray level."""
        if not 0 <= fill <= 255:
            raise ValueError(f"fill must be an 8-bit value, got {fill}")
        return cls(np.full((height, width, 3), fill, dtype=np.uint8), _copy=False)

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    def tobytes(self) -> bytes:
        return self._pixels.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    def __repr__(self) -> str:
        return f"ImageBuffer({self.width}x{self.height})"


@dataclass(frozen=True)
class SampleAnnotation:
    """An image with its object instances and category-id -> text bindings."""

    image: ImageBuffer
    instances: Tuple[Instance, ...]
    text_labels: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        w, h = self.image.width, self.image.height
        for inst in self.instances:
            b = inst.box
            if b.x1 < 0 or b.y1 < 0 or b.x2 > w or b.y2 > h:
                raise ValueError(
                    f"instance box {b.as_tuple()} outside image bounds {w}x{h}"
                )

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union in [0, 1]; 0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: Box2D, b: Box2D) -> float:
    """Generalized IoU in [-1, 1]: IoU minus the empty fraction of the
    smallest enclosing box."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    base = inter / union if union > 0.0 else 0.0
    if enclose <= 0.0:
        return base
    return base - (enclose - union) / enclose


def clip_box(b: Box2D, w: float, h: float) -> Box2D:
    """Clamp coordinates to [0, w] x [0, h]; may produce a zero-area box."""
    return Box2D(
        min(max(b.x1, 0.0), w),
        min(max(b.y1, 0.0), h),
        min(max(b.x2, 0.0), w),
        min(max(b.y2, 0.0), h),
    )


def affine_remap_box(b: Box2D, scale_x: float, scale_y: float, dx: float, dy: float) -> Box2D:
    """Map each corner by (x * scale_x + dx, y * scale_y + dy). Scales must be positive."""
    if scale_x <= 0 or scale_y <= 0:
        raise ValueError(f"scales must be positive, got ({scale_x}, {scale_y})")
    return Box2D(
        b.x1 * scale_x + dx,
        b.y1 * scale_y + dy,
        b.x2 * scale_x + dx,
        b.y2 * scale_y + dy,
    )


def box_union(a: Box2D, b: Box2D) -> Box2D:
    """Smallest box enclosing both inputs."""
    return Box2D(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def box_contains(outer: Box2D, inner: Box2D, tol: float = 0.0) -> bool:
    return (
        inner.x1 >= outer.x1 - tol
        and inner.y1 >= outer.y1 - tol
        and inner.x2 <= outer.x2 + tol
        and inner.y2 <= outer.y2 + tol
    )


def box_to_cxcywh(b: Box2D, image_w: float = 1.0, image_h: float = 1.0) -> Tuple[float, float, float, float]:
    """Corner form to (cx, cy, w, h), divided by the image size when given."""
    return (
        (b.x1 + b.x2) / 2.0 / image_w,
        (b.y1 + b.y2) / 2.0 / image_h,
        b.width / image_w,
        b.height / image_h,
    )


def box_from_cxcywh(cx: float, cy: float, w: float, h: float,
                    image_w: float = 1.0, image_h: float = 1.0) -> Box2D:
    """Inverse of :func:`box_to_cxcywh`."""
    cx, cy, w, h = cx * image_w, cy * image_h, w * image_w, h * image_h
    return Box2D(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def box_from_xywh(xywh: Sequence[float]) -> Box2D:
    """COCO-style [x, y, w, h] (top-left anchored) to corner form."""
    x, y, w, h = (float(v) for v in xywh)
    if w < 0 or h < 0:
        raise ValueError(f"xywh width/height must be >= 0, got {xywh!r}")
    return Box2D(x, y, x + w, y + h)


def box_to_xywh(b: Box2D) -> Tuple[float, float, float, float]:
    return (b.x1, b.y1, b.width, b.height)
