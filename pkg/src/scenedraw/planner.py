"""Incremental layout proposals for one priority group at a time.

The planner assembles a three-section reasoning prompt (canvas analysis,
context-aware planning, physics constraints), attaches the current canvas
render when visual context is enabled, and parses the model's placements.
A deterministic grid fallback covers total gateway failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from typing import Callable, Optional

from . import gateway as gw
from .checker import clamp_raw_box
from .geometry import BBox, LayoutSet, PlacedObject
from .interpreter import PriorityGroup
from .painter import CanvasState

GRID_FALLBACK_MAX_AREA = 0.15
GRID_FALLBACK_BUDGET = 0.8


class ProposalParseError(Exception):
    """Model reply could not be turned into placements."""


@dataclass(frozen=True)
class GroundingEntry:
    descriptor_id: str
    bbox: BBox
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence out of range")


@dataclass(frozen=True)
class GroundingMap:
    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def as_text(self) -> str:
        if not self.entries:
            return "(canvas is empty)"
        lines = []
        for e in self.entries:
            b = e.bbox
            lines.append(
                f"- {e.descriptor_id}: [{b.x_min:.3f}, {b.y_min:.3f}, {b.x_max:.3f}, {b.y_max:.3f}]"
                f" (confidence {e.confidence:.2f})"
            )
        return "\n".join(lines)


@dataclass(frozen=True)
class PlanningContext:
    prompt_text: str
    group: PriorityGroup
    history: LayoutSet
    canvas: Optional[CanvasState]
    grounding: GroundingMap
    visual_context_enabled: bool = True
    iteration: int = 1

    def __post_init__(self):
        for p in self.history.placed:
            if p.iteration >= self.iteration:
                raise ValueError("history iterations must precede the current one")


def load_template() -> str:
    return importlib_resources.files("scenedraw").joinpath("resources/vcot_template.txt").read_text()


def ground_existing(
    canvas: Optional[CanvasState],
    history: LayoutSet,
    detector: Optional[Callable] = None,
) -> GroundingMap:
    """Correspondences between placed descriptors and canvas regions.

    Default is the planned-as-ground-truth echo; a detector callable may
    override boxes, degrading back to the echo on failure.
    """
    if detector is not None and canvas is not None and canvas.image_png:
        try:
            entries = detector(canvas, history)
            return GroundingMap(tuple(entries))
        except Exception:
            pass
    return GroundingMap(
        tuple(GroundingEntry(p.descriptor_id, p.bbox, 1.0) for p in history.placed)
    )


def relation_pairs_in_request(group_size: int, history_size: int) -> int:
    """Relation pairs serialized into one planning request."""
    return group_size * (group_size - 1) // 2 + group_size * history_size


def build_vcot_request(ctx: PlanningContext) -> gw.ModelRequest:
    members = ctx.group.members
    listing = []
    for m in members:
        attrs = ", ".join(f"{k}={v}" for k, v in m.attributes) or "none"
        rels = "; ".join(f"{r.kind} {r.object_id}" for r in m.relations) or "none"
        listing.append(f"- {m.id}: {m.enriched_caption or m.name} (attributes: {attrs}; relations: {rels})")
    constraints = []
    history_ids = {p.descriptor_id for p in ctx.history.placed}
    for m in members:
        for r in m.relations:
            if r.object_id in history_ids or any(o.id == r.object_id for o in members):
                constraints.append(f"- {r.subject_id} must be {r.kind} {r.object_id}")
    user_text = load_template().format(
        prompt=ctx.prompt_text,
        grounding=ctx.grounding.as_text(),
        group_listing="\n".join(listing),
        constraints="\n".join(constraints) or "- none",
    )
    images = ()
    if ctx.visual_context_enabled and ctx.canvas is not None and ctx.canvas.image_png:
        images = (ctx.canvas.image_png,)
    return gw.ModelRequest(
        role_tag="planner",
        system_text="You place objects on a canvas as normalized bounding boxes.",
        user_text=user_text,
        images=images,
        response_schema_id="layout-proposal",
    )


def grid_fallback(group: PriorityGroup, history: LayoutSet, iteration: int) -> list:
    """Centered row of equal boxes; same (k, canvas_aspect) gives same boxes."""
    k = len(group.members)
    area = min(GRID_FALLBACK_MAX_AREA, GRID_FALLBACK_BUDGET / k)
    side = math.sqrt(area)
    base_z = max((p.z_order for p in history.placed), default=-1) + 1
    out = []
    for i, member in enumerate(group.members):
        cx = (i + 1) / (k + 1)
        x0 = min(max(cx - side / 2.0, 0.0), 1.0 - side)
        y0 = min(max(0.5 - side / 2.0, 0.0), 1.0 - side)
        out.append(
            PlacedObject(
                descriptor_id=member.id,
                bbox=BBox(x0, y0, x0 + side, y0 + side),
                iteration=iteration,
                z_order=base_z + i,
            )
        )
    return out


def propose_layout(ctx: PlanningContext, model_gateway: Optional[gw.Gateway]) -> tuple:
    """Returns (placements, warnings). Exactly one placement per member."""
    warnings: list[str] = []
    if model_gateway is None:
        return grid_fallback(ctx.group, ctx.history, ctx.iteration), ["grid fallback: no gateway"]
    req = build_vcot_request(ctx)
    try:
        resp = model_gateway.send(req)
        return _parse_placements(resp.parsed, ctx, warnings), warnings
    except (gw.FixtureMiss, gw.Transport, gw.SchemaViolation, ProposalParseError) as exc:
        warnings.append(f"grid fallback: {type(exc).__name__}")
        return grid_fallback(ctx.group, ctx.history, ctx.iteration), warnings


def _parse_placements(payload: dict, ctx: PlanningContext, warnings: list) -> list:
    member_ids = [m.id for m in ctx.group.members]
    base_z = max((p.z_order for p in ctx.history.placed), default=-1) + 1
    seen: dict[str, PlacedObject] = {}
    used_z: set[int] = {p.z_order for p in ctx.history.placed}
    for entry in payload.get("placements", []):
        did = entry["id"]
        if did not in member_ids:
            warnings.append(f"dropped placement for unknown id {did}")
            continue
        if did in seen:
            warnings.append(f"dropped duplicate placement for {did}")
            continue
        coords = entry["bbox"]
        bbox, was_out = clamp_raw_box(*coords)
        if was_out:
            warnings.append(f"clamped out-of-range box for {did}")
        z = entry.get("z_order")
        if z is None or z in used_z:
            z = (max(used_z) + 1) if used_z else 0
        used_z.add(z)
        seen[did] = PlacedObject(descriptor_id=did, bbox=bbox, iteration=ctx.iteration, z_order=z)
    missing = [m for m in ctx.group.members if m.id not in seen]
    if len(missing) == len(member_ids):
        raise ProposalParseError("no usable placements in reply")
    if missing:
        # fill gaps deterministically rather than burning another model call
        filler_group = PriorityGroup(ctx.group.priority, tuple(missing))
        fake_history = LayoutSet(
            placed=tuple(seen.values()) + ctx.history.placed,
            canvas_aspect=ctx.history.canvas_aspect,
        )
        for p in grid_fallback(filler_group, fake_history, ctx.iteration):
            warnings.append(f"grid-filled missing placement for {p.descriptor_id}")
            seen[p.descriptor_id] = p
    return [seen[mid] for mid in member_ids]
