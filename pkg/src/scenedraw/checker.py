"""Deterministic two-stage layout check-then-refine.

Stage 1 validates and repairs the current proposal at the object and group
level (bounds, size, aspect, relations). Stage 2 resolves cross-iteration
conflicts over all layouts (excess overlap, occlusion ordering, scale
drift). Repairs are deterministic, only applied when they change state,
and guarded so they never flip a currently-satisfied check into a
violation; this makes full_check idempotent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .geometry import (
    BBox,
    LayoutSet,
    PlacedObject,
    Relation,
    Z_ORDER_KINDS,
    bbox_area,
    bbox_iou,
    boxes_satisfy,
    horizontal_overlap,
    separation_gap,
    NEXT_TO_MAX_GAP,
    NEXT_TO_MAX_IOU,
    ON_TOP_MIN_OVERLAP,
)
from .interpreter import ScenePlan

EPS = 1e-9

VIOLATION_KINDS = (
    "TooSmall",
    "TooLarge",
    "OutOfBounds",
    "AspectExtreme",
    "RelationUnsatisfied",
    "OverlapExcess",
    "OcclusionOrderConflict",
    "ScaleDrift",
)

# Pairs bound by these kinds are expected to overlap or are depth-only.
OVERLAP_EXEMPT_KINDS = ("inside", "on-top-of", "behind", "in-front-of")


@dataclass(frozen=True)
class CheckerConfig:
    area_min: float = 0.002
    area_max: float = 0.95
    aspect_min: float = 1.0 / 8.0
    aspect_max: float = 8.0
    overlap_iou_max: float = 0.4
    drift_ratio_max: float = 2.0
    max_passes: int = 3
    enabled: bool = True


@dataclass(frozen=True)
class Violation:
    kind: str
    subjects: tuple
    measured: float
    threshold: float
    stage: int

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind: {self.kind!r}")
        object.__setattr__(self, "subjects", tuple(self.subjects))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "subjects": list(self.subjects),
            "measured": self.measured,
            "threshold": self.threshold,
            "stage": self.stage,
        }


@dataclass
class CheckReport:
    violations_before: list = field(default_factory=list)
    repairs_applied: list = field(default_factory=list)  # (Violation, edit description)
    violations_after: list = field(default_factory=list)
    passes_used: int = 0
    accepted_with_warnings: bool = False

    def merged_with(self, other: "CheckReport") -> "CheckReport":
        return CheckReport(
            violations_before=self.violations_before + other.violations_before,
            repairs_applied=self.repairs_applied + other.repairs_applied,
            violations_after=self.violations_after + other.violations_after,
            passes_used=self.passes_used + other.passes_used,
            accepted_with_warnings=self.accepted_with_warnings or other.accepted_with_warnings,
        )

    def to_json(self) -> dict:
        return {
            "violations_before": [v.to_json() for v in self.violations_before],
            "repairs_applied": [[v.to_json(), edit] for v, edit in self.repairs_applied],
            "violations_after": [v.to_json() for v in self.violations_after],
            "passes_used": self.passes_used,
            "accepted_with_warnings": self.accepted_with_warnings,
        }


# ---------------------------------------------------------------------------
# Box helpers
# ---------------------------------------------------------------------------


def clamp_raw_box(x_min: float, y_min: float, x_max: float, y_max: float) -> tuple:
    """Clamp raw coordinates into the canvas; returns (BBox, was_out_of_bounds).

    Degenerate extents are widened to a minimal sliver so downstream size
    repair can take over.
    """
    out = not (0.0 <= x_min and x_max <= 1.0 and 0.0 <= y_min and y_max <= 1.0)
    x0, x1 = max(0.0, min(x_min, 1.0)), max(0.0, min(x_max, 1.0))
    y0, y1 = max(0.0, min(y_min, 1.0)), max(0.0, min(y_max, 1.0))
    if x1 - x0 < 1e-4:
        mid = min(max((x0 + x1) / 2.0, 1e-4), 1.0 - 1e-4)
        x0, x1 = mid - 1e-4, mid + 1e-4
        out = True
    if y1 - y0 < 1e-4:
        mid = min(max((y0 + y1) / 2.0, 1e-4), 1.0 - 1e-4)
        y0, y1 = mid - 1e-4, mid + 1e-4
        out = True
    return BBox(x0, y0, x1, y1), out


def _shift_into_canvas(x0, y0, x1, y1) -> BBox:
    if x0 < 0.0:
        x1 -= x0
        x0 = 0.0
    if x1 > 1.0:
        x0 -= x1 - 1.0
        x1 = 1.0
    if y0 < 0.0:
        y1 -= y0
        y0 = 0.0
    if y1 > 1.0:
        y0 -= y1 - 1.0
        y1 = 1.0
    return BBox(max(0.0, x0), max(0.0, y0), min(1.0, x1), min(1.0, y1))


def _rescaled(b: BBox, area: float, aspect: float) -> BBox:
    w = math.sqrt(area * aspect)
    h = w / aspect
    # keep the target area exact even when one side would overflow the
    # canvas; the resulting aspect stays within bounds for in-range targets
    if w > 1.0:
        w, h = 1.0, area
    elif h > 1.0:
        w, h = area, 1.0
    cx, cy = b.center_x, b.center_y
    return _shift_into_canvas(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def _clamp(v, lo, hi):
    return max(lo, min(v, hi))


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


def _coerce_proposal(proposal: Sequence) -> list:
    """Accept PlacedObject items or raw (id, (x0,y0,x1,y1), iteration, z) tuples."""
    out = []
    for item in proposal:
        if isinstance(item, PlacedObject):
            out.append((item.descriptor_id, item.bbox, item.iteration, item.z_order, False))
        else:
            did, coords, iteration, z = item
            bbox, was_out = clamp_raw_box(*coords)
            out.append((did, bbox, iteration, z, was_out))
    return out


def check_stage1(
    proposal: Sequence,
    plan: ScenePlan,
    history: LayoutSet,
    config: CheckerConfig = CheckerConfig(),
) -> tuple:
    """Validate and repair the current proposal; history boxes never move."""
    report = CheckReport(passes_used=1)
    entries = _coerce_proposal(proposal)

    boxes: dict[str, BBox] = {did: bbox for did, bbox, _, _, _ in entries}
    zs: dict[str, int] = {did: z for did, _, _, z, _ in entries}
    iters: dict[str, int] = {did: it for did, _, it, _, _ in entries}
    for p in history.placed:
        boxes[p.descriptor_id] = p.bbox
        zs[p.descriptor_id] = p.z_order
    proposal_ids = [did for did, _, _, _, _ in entries]
    history_ids = {p.descriptor_id for p in history.placed}

    # out-of-bounds clamping happened during coercion
    for did, bbox, _, _, was_out in entries:
        if was_out:
            v = Violation("OutOfBounds", (did,), 1.0, 0.0, 1)
            report.violations_before.append(v)
            report.repairs_applied.append((v, f"clamped {did} into canvas"))

    # size and aspect, repaired by rescaling about the center
    for did in proposal_ids:
        b = boxes[did]
        aspect = b.width / b.height
        area = bbox_area(b)
        target_aspect = _clamp(aspect, config.aspect_min, config.aspect_max)
        target_area = _clamp(area, config.area_min, config.area_max)
        if aspect < config.aspect_min - EPS or aspect > config.aspect_max + EPS:
            v = Violation("AspectExtreme", (did,), aspect, target_aspect, 1)
            report.violations_before.append(v)
            boxes[did] = _rescaled(b, target_area, target_aspect)
            report.repairs_applied.append((v, f"rescaled {did} to aspect {target_aspect:g}"))
            b = boxes[did]
            area = bbox_area(b)
        if area < config.area_min - EPS or area > config.area_max + EPS:
            kind = "TooSmall" if area < config.area_min else "TooLarge"
            v = Violation(kind, (did,), area, target_area, 1)
            report.violations_before.append(v)
            boxes[did] = _rescaled(b, target_area, target_aspect)
            report.repairs_applied.append((v, f"rescaled {did} to area {target_area:g}"))

    # relations whose endpoints are all placed; subject moves, object fixed
    relations = _sorted_relations(plan)
    geo_relations = [r for r in relations if r.kind not in Z_ORDER_KINDS]

    def satisfied(r: Relation) -> Optional[bool]:
        if r.subject_id not in boxes or r.object_id not in boxes:
            return None
        return boxes_satisfy(r.kind, boxes[r.subject_id], boxes[r.object_id], r.margin)

    for r in geo_relations:
        state = satisfied(r)
        if state is None or state:
            continue
        v = Violation("RelationUnsatisfied", (r.subject_id, r.object_id), 0.0, 1.0, 1)
        report.violations_before.append(v)
        if r.subject_id in history_ids or r.subject_id not in proposal_ids:
            continue  # history is authoritative; cannot move the subject
        candidate = _relation_repair_box(r, boxes[r.subject_id], boxes[r.object_id])
        if candidate is None or candidate == boxes[r.subject_id]:
            continue
        if not boxes_satisfy(r.kind, candidate, boxes[r.object_id], r.margin):
            continue  # canvas clamping defeated the move; keep the original
        if _breaks_satisfied_relation(geo_relations, boxes, satisfied, r, candidate):
            continue
        boxes[r.subject_id] = candidate
        report.repairs_applied.append((v, f"translated {r.subject_id} for {r.kind} {r.object_id}"))

    repaired = [
        PlacedObject(descriptor_id=did, bbox=boxes[did], iteration=iters[did], z_order=zs[did])
        for did in proposal_ids
    ]

    # re-evaluate everything on the output
    report.violations_after = _stage1_violations(repaired, plan, history, config)
    report.accepted_with_warnings = bool(report.violations_after)
    return repaired, report


def _breaks_satisfied_relation(relations, boxes, satisfied, current, candidate) -> bool:
    moved = current.subject_id
    trial = dict(boxes)
    trial[moved] = candidate
    for other in relations:
        if other == current:
            continue
        if moved not in (other.subject_id, other.object_id):
            continue
        if other.subject_id not in boxes or other.object_id not in boxes:
            continue
        before = boxes_satisfy(other.kind, boxes[other.subject_id], boxes[other.object_id], other.margin)
        after = boxes_satisfy(other.kind, trial[other.subject_id], trial[other.object_id], other.margin)
        if before and not after:
            return True
    return False


def _relation_repair_box(r: Relation, s: BBox, o: BBox) -> Optional[BBox]:
    """Deterministic translated subject box satisfying r when reachable."""
    w, h = s.width, s.height
    # center-comparison kinds: the strict inequality holds after the move
    # because the centers end up a further half-extent beyond the margin
    if r.kind == "left-of":
        cx = o.center_x - w / 2.0 - r.margin
        return _shift_into_canvas(cx - w / 2.0, s.y_min, cx + w / 2.0, s.y_max)
    if r.kind == "right-of":
        cx = o.center_x + w / 2.0 + r.margin
        return _shift_into_canvas(cx - w / 2.0, s.y_min, cx + w / 2.0, s.y_max)
    if r.kind == "above":
        cy = o.center_y - h / 2.0 - r.margin
        return _shift_into_canvas(s.x_min, cy - h / 2.0, s.x_max, cy + h / 2.0)
    if r.kind == "below":
        cy = o.center_y + h / 2.0 + r.margin
        return _shift_into_canvas(s.x_min, cy - h / 2.0, s.x_max, cy + h / 2.0)
    if r.kind == "on-top-of":
        dy = o.y_min - s.y_max
        x0, x1 = s.x_min, s.x_max
        if horizontal_overlap(BBox(x0, 0.0, x1, 1.0), BBox(o.x_min, 0.0, o.x_max, 1.0)) < ON_TOP_MIN_OVERLAP * w:
            dx = o.center_x - s.center_x
            x0, x1 = x0 + dx, x1 + dx
        return _shift_into_canvas(x0, s.y_min + dy, x1, s.y_max + dy)
    if r.kind == "inside":
        if w > o.width + EPS or h > o.height + EPS:
            return None  # translation alone cannot fix this
        x0 = _clamp(s.x_min, o.x_min, o.x_max - w)
        y0 = _clamp(s.y_min, o.y_min, o.y_max - h)
        return BBox(x0, y0, x0 + w, y0 + h)
    if r.kind == "next-to":
        gap = separation_gap(s, o)
        if gap > NEXT_TO_MAX_GAP:
            # move the subject closer along the axis with the larger gap
            dx_gap = max(o.x_min - s.x_max, s.x_min - o.x_max)
            dy_gap = max(o.y_min - s.y_max, s.y_min - o.y_max)
            target = NEXT_TO_MAX_GAP * 0.8
            if dx_gap >= dy_gap:
                move = dx_gap - target
                dx = move if o.x_min - s.x_max > 0 else -move
                return _shift_into_canvas(s.x_min + dx, s.y_min, s.x_max + dx, s.y_max)
            move = dy_gap - target
            dy = move if o.y_min - s.y_max > 0 else -move
            return _shift_into_canvas(s.x_min, s.y_min + dy, s.x_max, s.y_max + dy)
        if bbox_iou(s, o) > NEXT_TO_MAX_IOU:
            return _translated_to_iou(s, o, NEXT_TO_MAX_IOU * 0.8)
        return None
    return None


def _translated_to_iou(mover: BBox, fixed: BBox, target_iou: float) -> Optional[BBox]:
    """Smallest axis translation of mover so that IoU with fixed <= target."""
    a1, a2 = bbox_area(mover), bbox_area(fixed)
    target_inter = target_iou * (a1 + a2) / (1.0 + target_iou)
    iw = min(mover.x_max, fixed.x_max) - max(mover.x_min, fixed.x_min)
    ih = min(mover.y_max, fixed.y_max) - max(mover.y_min, fixed.y_min)
    if iw <= 0 or ih <= 0:
        return None
    candidates = []
    # shrinking the overlap width to target_inter / ih (or fully apart)
    need_iw = target_inter / ih
    need_ih = target_inter / iw
    for axis, need, span in (("x", need_iw, iw), ("y", need_ih, ih)):
        move = span - need  # displacement that leaves exactly `need` overlap
        if move <= 0:
            continue
        for sign in (+1.0, -1.0):
            d = move * sign
            if axis == "x":
                nb = (mover.x_min + d, mover.y_min, mover.x_max + d, mover.y_max)
            else:
                nb = (mover.x_min, mover.y_min + d, mover.x_max, mover.y_max + d)
            # reject moves that leave the canvas; clamping would undo them
            if nb[0] < -EPS or nb[2] > 1.0 + EPS or nb[1] < -EPS or nb[3] > 1.0 + EPS:
                continue
            # only one sign per axis shrinks the overlap; verify the result
            achieved = bbox_iou(BBox(max(0.0, nb[0]), max(0.0, nb[1]), min(1.0, nb[2]), min(1.0, nb[3])), fixed)
            if achieved > target_iou + EPS:
                continue
            free = _free_margin_after(nb)
            candidates.append((abs(d), -free, 0 if sign > 0 else 1, nb))
    if not candidates:
        return None
    candidates.sort()
    nb = candidates[0][3]
    return BBox(max(0.0, nb[0]), max(0.0, nb[1]), min(1.0, nb[2]), min(1.0, nb[3]))


def _free_margin_after(nb: tuple) -> float:
    return min(nb[0], nb[1], 1.0 - nb[2], 1.0 - nb[3])


def _stage1_violations(proposal, plan, history, config) -> list:
    out = []
    boxes = {p.descriptor_id: p.bbox for p in proposal}
    for p in history.placed:
        boxes.setdefault(p.descriptor_id, p.bbox)
    for p in proposal:
        b = p.bbox
        area = bbox_area(b)
        aspect = b.width / b.height
        if area < config.area_min - EPS:
            out.append(Violation("TooSmall", (p.descriptor_id,), area, config.area_min, 1))
        if area > config.area_max + EPS:
            out.append(Violation("TooLarge", (p.descriptor_id,), area, config.area_max, 1))
        if aspect < config.aspect_min - EPS or aspect > config.aspect_max + EPS:
            bound = config.aspect_min if aspect < 1 else config.aspect_max
            out.append(Violation("AspectExtreme", (p.descriptor_id,), aspect, bound, 1))
    for r in _sorted_relations(plan):
        if r.kind in Z_ORDER_KINDS:
            continue
        if r.subject_id in boxes and r.object_id in boxes:
            if not boxes_satisfy(r.kind, boxes[r.subject_id], boxes[r.object_id], r.margin):
                out.append(Violation("RelationUnsatisfied", (r.subject_id, r.object_id), 0.0, 1.0, 1))
    return out


def _sorted_relations(plan: ScenePlan) -> list:
    return sorted(plan.relations(), key=lambda r: (r.subject_id, r.object_id, r.kind))


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


def check_stage2(
    all_layouts: LayoutSet,
    plan: ScenePlan,
    config: CheckerConfig = CheckerConfig(),
) -> tuple:
    report = CheckReport()
    boxes = {p.descriptor_id: p.bbox for p in all_layouts.placed}
    zs = {p.descriptor_id: p.z_order for p in all_layouts.placed}
    meta = {p.descriptor_id: p for p in all_layouts.placed}

    report.violations_before = _stage2_violations(boxes, zs, plan, config)

    passes = 0
    while passes < config.max_passes:
        passes += 1
        applied = _stage2_pass(boxes, zs, meta, plan, config, report)
        if not applied:
            break
    report.passes_used = passes

    report.violations_after = _stage2_violations(boxes, zs, plan, config)
    report.accepted_with_warnings = bool(report.violations_after)

    repaired = LayoutSet(
        placed=tuple(
            PlacedObject(
                descriptor_id=p.descriptor_id,
                bbox=boxes[p.descriptor_id],
                iteration=p.iteration,
                z_order=zs[p.descriptor_id],
            )
            for p in all_layouts.placed
        ),
        canvas_aspect=all_layouts.canvas_aspect,
    )
    return repaired, report


def _pair_key(a: str, b: str) -> tuple:
    return (a, b) if a <= b else (b, a)


def _exempt_pairs(plan: ScenePlan) -> set:
    out = set()
    for r in plan.relations():
        if r.kind in OVERLAP_EXEMPT_KINDS:
            out.add(_pair_key(r.subject_id, r.object_id))
    return out


def _same_name_pairs(ids, plan: ScenePlan) -> list:
    def base_name(did: str) -> str:
        d = plan.descriptor(did)
        if d is not None:
            return d.name
        return did.split("#")[0]

    by_name: dict[str, list] = {}
    for did in sorted(ids):
        by_name.setdefault(base_name(did), []).append(did)
    pairs = []
    for name, members in sorted(by_name.items()):
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pairs.append((members[i], members[j]))
    return pairs


def _stage2_violations(boxes, zs, plan, config) -> list:
    out = []
    exempt = _exempt_pairs(plan)
    ids = sorted(boxes)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            a, b = ids[i], ids[j]
            if _pair_key(a, b) in exempt:
                continue
            iou = bbox_iou(boxes[a], boxes[b])
            if iou > config.overlap_iou_max + EPS:
                out.append(Violation("OverlapExcess", (a, b), iou, config.overlap_iou_max, 2))
    for r in _sorted_relations(plan):
        if r.kind not in Z_ORDER_KINDS:
            continue
        if r.subject_id in zs and r.object_id in zs:
            zs_s, zs_o = zs[r.subject_id], zs[r.object_id]
            ok = zs_s < zs_o if r.kind == "behind" else zs_s > zs_o
            if not ok:
                out.append(
                    Violation("OcclusionOrderConflict", (r.subject_id, r.object_id), zs_s, zs_o, 2)
                )
    for a, b in _same_name_pairs(boxes, plan):
        ratio = bbox_area(boxes[b]) / bbox_area(boxes[a])
        bad = ratio > config.drift_ratio_max + EPS or ratio < 1.0 / config.drift_ratio_max - EPS
        if bad:
            out.append(Violation("ScaleDrift", (a, b), ratio, config.drift_ratio_max, 2))
    return out


def _mover_priority(did: str, plan: ScenePlan, meta: dict) -> tuple:
    d = plan.descriptor(did)
    priority = d.priority if d is not None else 1
    p = meta.get(did)
    return (priority, p.iteration if p else 0, p.z_order if p else 0, did)


def _relation_violation_set(boxes, plan) -> set:
    out = set()
    for r in plan.relations():
        if r.kind in Z_ORDER_KINDS:
            continue
        if r.subject_id in boxes and r.object_id in boxes:
            if not boxes_satisfy(r.kind, boxes[r.subject_id], boxes[r.object_id], r.margin):
                out.add(("RelationUnsatisfied", r.subject_id, r.object_id, r.kind))
    return out


def _stage2_pass(boxes, zs, meta, plan, config, report) -> bool:
    applied = False

    def would_add_violation(trial_boxes, trial_zs, before_set) -> bool:
        after = {
            (v.kind,) + tuple(v.subjects)
            for v in _stage2_violations(trial_boxes, trial_zs, plan, config)
        }
        # stage-2 repairs must not undo geometric relations that stage 1
        # already satisfied, or the two stages would fight across runs
        after |= _relation_violation_set(trial_boxes, plan)
        return bool(after - before_set)

    current = _stage2_violations(boxes, zs, plan, config)
    before_set = {(v.kind,) + tuple(v.subjects) for v in current}
    before_set |= _relation_violation_set(boxes, plan)

    # overlap repairs first
    for v in [v for v in current if v.kind == "OverlapExcess"]:
        a, b = v.subjects
        if bbox_iou(boxes[a], boxes[b]) <= config.overlap_iou_max + EPS:
            continue  # fixed by an earlier repair in this pass
        mover = max(a, b, key=lambda d: _mover_priority(d, plan, meta))
        fixed = b if mover == a else a
        candidate = _translated_to_iou(boxes[mover], boxes[fixed], config.overlap_iou_max - 1e-6)
        if candidate is None or candidate == boxes[mover]:
            continue
        trial = dict(boxes)
        trial[mover] = candidate
        if would_add_violation(trial, zs, before_set):
            continue
        boxes[mover] = candidate
        report.repairs_applied.append((v, f"translated {mover} away from {fixed}"))
        applied = True

    # occlusion ordering: swap the pair's z orders
    current = _stage2_violations(boxes, zs, plan, config)
    for v in [v for v in current if v.kind == "OcclusionOrderConflict"]:
        a, b = v.subjects
        still = {
            tuple(w.subjects)
            for w in _stage2_violations(boxes, zs, plan, config)
            if w.kind == "OcclusionOrderConflict"
        }
        if (a, b) not in still:
            continue  # fixed by an earlier swap in this pass
        trial = dict(zs)
        trial[a], trial[b] = trial[b], trial[a]
        if would_add_violation(boxes, trial, before_set):
            continue
        zs[a], zs[b] = zs[b], zs[a]
        report.repairs_applied.append((v, f"swapped z_order of {a} and {b}"))
        applied = True

    # scale drift: rescale the later-placed box to the boundary ratio
    current = _stage2_violations(boxes, zs, plan, config)
    for v in [v for v in current if v.kind == "ScaleDrift"]:
        a, b = v.subjects
        earlier, later = (a, b)
        pa, pb = meta.get(a), meta.get(b)
        if pa is not None and pb is not None and (pb.iteration, pb.z_order) < (pa.iteration, pa.z_order):
            earlier, later = b, a
        area_e = bbox_area(boxes[earlier])
        area_l = bbox_area(boxes[later])
        target = _clamp(area_l, area_e / config.drift_ratio_max, area_e * config.drift_ratio_max)
        if abs(target - area_l) < EPS:
            continue
        bl = boxes[later]
        candidate = _rescaled(bl, target, bl.width / bl.height)
        if candidate == boxes[later]:
            continue
        trial = dict(boxes)
        trial[later] = candidate
        if would_add_violation(trial, zs, before_set):
            continue
        boxes[later] = candidate
        report.repairs_applied.append((v, f"rescaled {later} toward area of {earlier}"))
        applied = True

    return applied


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def merge_layout(history: LayoutSet, proposal: Sequence) -> LayoutSet:
    """History plus proposal, reassigning colliding z orders deterministically."""
    used = {p.z_order for p in history.placed}
    merged = list(history.placed)
    for p in proposal:
        z = p.z_order
        while z in used:
            z = (max(used) + 1) if used else 0
        used.add(z)
        merged.append(replace(p, z_order=z))
    return LayoutSet(placed=tuple(merged), canvas_aspect=history.canvas_aspect)


MAX_FIXPOINT_ROUNDS = 8


def full_check(
    proposal: Sequence,
    plan: ScenePlan,
    history: LayoutSet,
    config: CheckerConfig = CheckerConfig(),
) -> tuple:
    """Stage 1 on the proposal, merge with history, stage 2 over everything.

    The two stages are iterated to a fixpoint: a stage-2 repair (say a
    drift rescale) can turn a previously unrepairable relation into a
    repairable one, so a single pass would leave work for the next call
    and the check would not be idempotent.
    """
    if not config.enabled:
        merged = merge_layout(history, list(_as_placed(proposal)))
        return merged, CheckReport()
    history_ids = {p.descriptor_id for p in history.placed}

    repaired, report1 = check_stage1(proposal, plan, history, config)
    merged = merge_layout(history, repaired)
    refined, report2 = check_stage2(merged, plan, config)

    report = CheckReport(
        violations_before=report1.violations_before + report2.violations_before,
        repairs_applied=report1.repairs_applied + report2.repairs_applied,
        passes_used=report1.passes_used + report2.passes_used,
    )
    last = report2
    for _ in range(MAX_FIXPOINT_ROUNDS):
        hist_now = LayoutSet(
            placed=tuple(p for p in refined.placed if p.descriptor_id in history_ids),
            canvas_aspect=refined.canvas_aspect,
        )
        part = [p for p in refined.placed if p.descriptor_id not in history_ids]
        repaired, r1 = check_stage1(part, plan, hist_now, config)
        merged = merge_layout(hist_now, repaired)
        again, r2 = check_stage2(merged, plan, config)
        if again == refined:
            break
        refined = again
        report.repairs_applied += r1.repairs_applied + r2.repairs_applied
        report.passes_used += r1.passes_used + r2.passes_used
        last = r2

    stage1_after = _stage1_violations(
        [p for p in refined.placed if p.descriptor_id not in history_ids],
        plan,
        LayoutSet(placed=tuple(p for p in refined.placed if p.descriptor_id in history_ids)),
        config,
    )
    report.violations_after = stage1_after + last.violations_after
    report.accepted_with_warnings = bool(report.violations_after)
    return refined, report


def _as_placed(proposal: Sequence):
    for did, bbox, iteration, z, _ in _coerce_proposal(proposal):
        yield PlacedObject(descriptor_id=did, bbox=bbox, iteration=iteration, z_order=z)
