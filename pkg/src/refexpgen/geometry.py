"""Geometric value types shared by every stage of the engine.

Coordinates are real-valued pixels, origin at the top-left corner, y grows
downward. Everything here is an immutable value object, safe to share
between worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class GeometryError(ValueError):
    """A box, frame, or point violates its geometric invariants."""


class PointOutsideFrame(GeometryError):
    """A point was evaluated against a frame that does not contain it."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: (x_min, y_min) top-left, (x_max, y_max) bottom-right."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(isinstance(c, (int, float)) and math.isfinite(c) for c in coords):
            raise GeometryError(f"bbox coordinates must be finite numbers, got {coords!r}")
        if any(c < 0 for c in coords):
            raise GeometryError(f"bbox coordinates must be >= 0, got {coords!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"bbox must have positive extent, got {coords!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_list(self) -> list[float]:
        return [float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)]


@dataclass(frozen=True)
class Frame:
    """A rectangular coordinate frame, possibly offset inside a larger image.

    The root frame of an image has origin (0, 0); refinement frames carry the
    offset of their top-left corner in original-image coordinates.
    """

    width: float
    height: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.width) and self.width > 0):
            raise GeometryError(f"frame width must be positive, got {self.width!r}")
        if not (math.isfinite(self.height) and self.height > 0):
            raise GeometryError(f"frame height must be positive, got {self.height!r}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin_x + self.width / 2.0, self.origin_y + self.height / 2.0)

    def contains(self, p: tuple[float, float]) -> bool:
        """Inclusive on all borders, so edge-hugging points stay in-frame."""
        px, py = p
        return (
            self.origin_x <= px <= self.origin_x + self.width
            and self.origin_y <= py <= self.origin_y + self.height
        )


class Role(Enum):
    SUBJECT = "subject"
    OBJECT = "object"
    UNKNOWN = "unknown"


class Ring(Enum):
    CENTER = "center"
    TRANSITION = "transition"
    EDGE = "edge"


class Direction(Enum):
    TOP = "top"
    BOTTOM = "bottom"
    LEFT = "left"
    RIGHT = "right"
    NONE = "none"


@dataclass(frozen=True)
class RegionLabel:
    """One (ring, direction) cell of a frame partition.

    (CENTER, NONE) is the unique undirected label, produced only by the exact
    frame center.
    """

    ring: Ring
    direction: Direction

    def __post_init__(self) -> None:
        if self.direction is Direction.NONE and self.ring is not Ring.CENTER:
            raise GeometryError(f"undirected label must be centered, got ring={self.ring}")

    @property
    def word(self) -> str:
        """Human-readable label word, e.g. ``center``, ``left-edge``."""
        if self.direction is Direction.NONE:
            return "center"
        return f"{self.direction.value}-{self.ring.value}"


@dataclass(frozen=True)
class Instance:
    """One detected object with its evolving description."""

    instance_id: str
    image_id: str
    bbox: BBox
    category: str
    confidence: float
    role: Role = Role.UNKNOWN
    description: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be within [0, 1], got {self.confidence!r}")


def bbox_center(b: BBox) -> tuple[float, float]:
    """Midpoint of the box; the anchor point for region assignment."""
    return ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)


def normalized_offset(p: tuple[float, float], f: Frame) -> tuple[float, float]:
    """Offset of ``p`` from the frame center, scaled to half-extents.

    Returns (dx, dy) with each component in [-1, 1] for in-frame points:
    (0, 0) at the frame center, -1/+1 on the left/right (top/bottom) border.

    Raises:
        PointOutsideFrame: if ``p`` is not within ``f`` (borders inclusive).
    """
    if not f.contains(p):
        raise PointOutsideFrame(f"point {p!r} lies outside frame {f!r}")
    cx, cy = f.center
    dx = (p[0] - cx) / (f.width / 2.0)
    dy = (p[1] - cy) / (f.height / 2.0)
    return (dx, dy)
