"""Core domain types and pure bounding-box geometry shared by all agents.

Coordinates are canvas-normalized fractions with the origin at the top-left
corner and y increasing downward. All types are immutable values; every
operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

RELATION_KINDS = (
    "left-of",
    "right-of",
    "above",
    "below",
    "on-top-of",
    "inside",
    "next-to",
    "behind",
    "in-front-of",
)

# Kinds decided purely by z-order, not box coordinates.
Z_ORDER_KINDS = ("behind", "in-front-of")

ON_TOP_EDGE_TOLERANCE = 0.03
ON_TOP_MIN_OVERLAP = 0.2
NEXT_TO_MAX_GAP = 0.05
NEXT_TO_MAX_IOU = 0.05


class MissingEndpoint(KeyError):
    """A relation endpoint refers to a descriptor with no placed box."""


@dataclass(frozen=True)
class Prompt:
    text: str
    id: str = "prompt"

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized canvas coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0):
            raise ValueError(f"invalid x extent: [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min < self.y_max <= 1.0):
            raise ValueError(f"invalid y extent: [{self.y_min}, {self.y_max}]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center_x(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def to_json(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BBox":
        return cls(d["x_min"], d["y_min"], d["x_max"], d["y_max"])


@dataclass(frozen=True)
class Relation:
    subject_id: str
    object_id: str
    kind: str
    margin: float = 0.0

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise ValueError("relation endpoints must differ")
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind: {self.kind!r}")
        if not (0.0 <= self.margin <= 0.5):
            raise ValueError(f"margin out of range: {self.margin}")

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "object_id": self.object_id,
            "kind": self.kind,
            "margin": self.margin,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Relation":
        return cls(d["subject_id"], d["object_id"], d["kind"], d.get("margin", 0.0))


@dataclass(frozen=True)
class ObjectDescriptor:
    id: str
    name: str
    attributes: tuple = ()  # (key, value) string pairs
    relations: tuple = ()  # Relation instances with subject_id == id
    priority: int = 1
    enriched_caption: str = ""

    def __post_init__(self):
        if self.priority < 1:
            raise ValueError("priority must be >= 1")
        object.__setattr__(self, "attributes", tuple(tuple(a) for a in self.attributes))
        object.__setattr__(self, "relations", tuple(self.relations))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "attributes": [list(a) for a in self.attributes],
            "relations": [r.to_json() for r in self.relations],
            "priority": self.priority,
            "enriched_caption": self.enriched_caption,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ObjectDescriptor":
        return cls(
            id=d["id"],
            name=d["name"],
            attributes=tuple((a[0], a[1]) for a in d.get("attributes", [])),
            relations=tuple(Relation.from_json(r) for r in d.get("relations", [])),
            priority=d.get("priority", 1),
            enriched_caption=d.get("enriched_caption", ""),
        )


@dataclass(frozen=True)
class PlacedObject:
    descriptor_id: str
    bbox: BBox
    iteration: int = 1
    z_order: int = 0

    def __post_init__(self):
        if self.iteration < 1:
            raise ValueError("iteration must be >= 1")

    def to_json(self) -> dict:
        return {
            "descriptor_id": self.descriptor_id,
            "bbox": self.bbox.to_json(),
            "iteration": self.iteration,
            "z_order": self.z_order,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PlacedObject":
        return cls(
            descriptor_id=d["descriptor_id"],
            bbox=BBox.from_json(d["bbox"]),
            iteration=d.get("iteration", 1),
            z_order=d.get("z_order", 0),
        )


@dataclass(frozen=True)
class LayoutSet:
    placed: tuple = ()
    canvas_aspect: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "placed", tuple(self.placed))
        ids = [p.descriptor_id for p in self.placed]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate descriptor_id in layout")
        zs = [p.z_order for p in self.placed]
        if len(zs) != len(set(zs)):
            raise ValueError("duplicate z_order in layout")

    def get(self, descriptor_id: str) -> Optional[PlacedObject]:
        for p in self.placed:
            if p.descriptor_id == descriptor_id:
                return p
        return None

    def with_objects(self, new: Iterable[PlacedObject]) -> "LayoutSet":
        return LayoutSet(self.placed + tuple(new), self.canvas_aspect)

    def to_json(self) -> dict:
        return {
            "placed": [p.to_json() for p in self.placed],
            "canvas_aspect": self.canvas_aspect,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LayoutSet":
        return cls(
            placed=tuple(PlacedObject.from_json(p) for p in d.get("placed", [])),
            canvas_aspect=d.get("canvas_aspect", 1.0),
        )


def bbox_area(b: BBox) -> float:
    return b.width * b.height


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def bbox_iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (bbox_area(a) + bbox_area(b) - inter)


def separation_gap(a: BBox, b: BBox) -> float:
    """Distance between the closest facing edges; 0 when the boxes touch or overlap."""
    dx = max(b.x_min - a.x_max, a.x_min - b.x_max)
    dy = max(b.y_min - a.y_max, a.y_min - b.y_max)
    return max(dx, dy, 0.0)


def horizontal_overlap(a: BBox, b: BBox) -> float:
    return max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))


def boxes_satisfy(kind: str, subject: BBox, obj: BBox, margin: float = 0.0) -> bool:
    """Geometric relation predicate over two boxes (z-order kinds excluded)."""
    if kind == "left-of":
        return obj.center_x - subject.center_x > margin
    if kind == "right-of":
        return subject.center_x - obj.center_x > margin
    if kind == "above":
        return obj.center_y - subject.center_y > margin
    if kind == "below":
        return subject.center_y - obj.center_y > margin
    if kind == "on-top-of":
        edge_ok = abs(subject.y_max - obj.y_min) <= ON_TOP_EDGE_TOLERANCE
        overlap_ok = horizontal_overlap(subject, obj) >= ON_TOP_MIN_OVERLAP * subject.width
        return edge_ok and overlap_ok
    if kind == "inside":
        return (
            obj.x_min <= subject.x_min
            and subject.x_max <= obj.x_max
            and obj.y_min <= subject.y_min
            and subject.y_max <= obj.y_max
        )
    if kind == "next-to":
        return separation_gap(subject, obj) <= NEXT_TO_MAX_GAP and bbox_iou(subject, obj) <= NEXT_TO_MAX_IOU
    raise ValueError(f"not a geometric relation kind: {kind!r}")


def relation_satisfied(r: Relation, layout: LayoutSet) -> bool:
    subject = layout.get(r.subject_id)
    obj = layout.get(r.object_id)
    if subject is None:
        raise MissingEndpoint(r.subject_id)
    if obj is None:
        raise MissingEndpoint(r.object_id)
    if r.kind == "behind":
        return subject.z_order < obj.z_order
    if r.kind == "in-front-of":
        return subject.z_order > obj.z_order
    return boxes_satisfy(r.kind, subject.bbox, obj.bbox, r.margin)
