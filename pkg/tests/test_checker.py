import random

import pytest

from helpers import random_box
from scenedraw.checker import (
    CheckReport,
    CheckerConfig,
    Violation,
    check_stage1,
    check_stage2,
    clamp_raw_box,
    full_check,
    merge_layout,
    _translated_to_iou,
)
from scenedraw.geometry import BBox, LayoutSet, ObjectDescriptor, PlacedObject, Relation, bbox_area, bbox_iou, boxes_satisfy
from scenedraw.interpreter import PriorityGroup, ScenePlan


def make_plan(ids, relations=(), names=None):
    names = names or {}
    members = []
    for did in ids:
        rels = tuple(r for r in relations if r.subject_id == did)
        members.append(ObjectDescriptor(id=did, name=names.get(did, did), relations=rels, priority=1))
    return ScenePlan(mode="layout-aware", groups=(PriorityGroup(1, tuple(members)),))


def placed(did, coords, iteration=1, z=0):
    return PlacedObject(descriptor_id=did, bbox=BBox(*coords), iteration=iteration, z_order=z)


class TestClamp:
    def test_out_of_range_clamped(self):
        box, out = clamp_raw_box(-0.1, 0.2, 0.4, 0.7)
        assert box == BBox(0.0, 0.2, 0.4, 0.7)
        assert out

    def test_in_range_untouched(self):
        box, out = clamp_raw_box(0.1, 0.2, 0.4, 0.7)
        assert box == BBox(0.1, 0.2, 0.4, 0.7)
        assert not out

    def test_degenerate_widened_to_sliver(self):
        box, out = clamp_raw_box(0.5, 0.2, 0.5, 0.7)
        assert out
        assert box.width == pytest.approx(2e-4)
        assert box.x_min == pytest.approx(0.5 - 1e-4)

    def test_fully_outside_collapses_to_edge_sliver(self):
        box, out = clamp_raw_box(1.2, 1.2, 1.5, 1.5)
        assert out
        assert 0.0 <= box.x_min and box.x_max <= 1.0


class TestStage1Size:
    def test_too_small_rescaled_to_minimum(self):
        plan = make_plan(["dot"])
        proposal = [("dot", (0.5, 0.5, 0.51, 0.51), 1, 0)]
        repaired, report = check_stage1(proposal, plan, LayoutSet())
        assert bbox_area(repaired[0].bbox) == pytest.approx(0.002, abs=1e-9)
        assert any(v.kind == "TooSmall" for v in report.violations_before)
        assert report.violations_after == []

    def test_too_large_rescaled_to_maximum(self):
        plan = make_plan(["wall"])
        proposal = [("wall", (0.0, 0.0, 1.0, 1.0), 1, 0)]
        repaired, report = check_stage1(proposal, plan, LayoutSet())
        assert bbox_area(repaired[0].bbox) == pytest.approx(0.95, abs=1e-9)
        assert any(v.kind == "TooLarge" for v in report.violations_before)

    def test_extreme_aspect_rescaled(self):
        plan = make_plan(["pole"])
        proposal = [("pole", (0.45, 0.0, 0.47, 1.0), 1, 0)]  # aspect 0.02
        repaired, report = check_stage1(proposal, plan, LayoutSet())
        b = repaired[0].bbox
        assert b.width / b.height == pytest.approx(1.0 / 8.0, rel=1e-9)
        assert any(v.kind == "AspectExtreme" for v in report.violations_before)
        assert report.violations_after == []

    def test_clean_proposal_untouched(self):
        plan = make_plan(["cat"])
        box = BBox(0.3, 0.3, 0.6, 0.6)
        repaired, report = check_stage1([placed("cat", (0.3, 0.3, 0.6, 0.6))], plan, LayoutSet())
        assert repaired[0].bbox == box
        assert report.violations_before == []
        assert report.repairs_applied == []


class TestStage1Relations:
    def test_left_of_repair_exact(self):
        # subject width 0.2 centered at 0.7, object centered at 0.3: the
        # repair puts the subject center at 0.3 - 0.1 = 0.2
        rel = Relation("cube", "sphere", "left-of")
        plan = make_plan(["cube", "sphere"], [rel])
        proposal = [
            ("cube", (0.6, 0.4, 0.8, 0.6), 1, 0),
            ("sphere", (0.2, 0.4, 0.4, 0.6), 1, 1),
        ]
        repaired, report = check_stage1(proposal, plan, LayoutSet())
        cube = next(p for p in repaired if p.descriptor_id == "cube")
        assert cube.bbox.x_min == pytest.approx(0.1, abs=1e-12)
        assert cube.bbox.x_max == pytest.approx(0.3, abs=1e-12)
        assert (cube.bbox.y_min, cube.bbox.y_max) == (0.4, 0.6)
        assert boxes_satisfy("left-of", cube.bbox, BBox(0.2, 0.4, 0.4, 0.6))
        assert any(v.kind == "RelationUnsatisfied" for v in report.violations_before)
        assert report.violations_after == []

    def test_margin_pushes_further(self):
        rel = Relation("cube", "sphere", "left-of", margin=0.1)
        plan = make_plan(["cube", "sphere"], [rel])
        proposal = [
            ("cube", (0.6, 0.4, 0.8, 0.6), 1, 0),
            ("sphere", (0.2, 0.4, 0.4, 0.6), 1, 1),
        ]
        repaired, _ = check_stage1(proposal, plan, LayoutSet())
        cube = next(p for p in repaired if p.descriptor_id == "cube")
        assert cube.bbox.center_x == pytest.approx(0.1, abs=1e-12)

    def test_on_top_of_aligns_bottom_edge(self):
        rel = Relation("cup", "table", "on-top-of")
        plan = make_plan(["cup", "table"], [rel])
        proposal = [
            ("cup", (0.4, 0.1, 0.5, 0.2), 1, 1),
            ("table", (0.2, 0.6, 0.8, 0.9), 1, 0),
        ]
        repaired, _ = check_stage1(proposal, plan, LayoutSet())
        cup = next(p for p in repaired if p.descriptor_id == "cup")
        table = next(p for p in repaired if p.descriptor_id == "table")
        assert cup.bbox.y_max == pytest.approx(table.bbox.y_min, abs=1e-9)
        assert boxes_satisfy("on-top-of", cup.bbox, table.bbox)

    def test_inside_clamped_into_container(self):
        rel = Relation("bear", "box", "inside")
        plan = make_plan(["bear", "box"], [rel])
        proposal = [
            ("bear", (0.0, 0.0, 0.2, 0.2), 1, 1),
            ("box", (0.4, 0.4, 0.9, 0.9), 1, 0),
        ]
        repaired, _ = check_stage1(proposal, plan, LayoutSet())
        bear = next(p for p in repaired if p.descriptor_id == "bear")
        box = next(p for p in repaired if p.descriptor_id == "box")
        assert boxes_satisfy("inside", bear.bbox, box.bbox)

    def test_oversized_inside_subject_left_unrepaired(self):
        rel = Relation("bear", "box", "inside")
        plan = make_plan(["bear", "box"], [rel])
        proposal = [
            ("bear", (0.0, 0.0, 0.8, 0.8), 1, 1),
            ("box", (0.4, 0.4, 0.6, 0.6), 1, 0),
        ]
        _, report = check_stage1(proposal, plan, LayoutSet())
        assert any(v.kind == "RelationUnsatisfied" for v in report.violations_after)
        assert report.accepted_with_warnings

    def test_history_subject_never_moves(self):
        rel = Relation("desk", "lamp", "below")
        plan = make_plan(["desk", "lamp"], [rel])
        history = LayoutSet(placed=(placed("desk", (0.2, 0.1, 0.8, 0.3), iteration=1, z=0),))
        proposal = [("lamp", (0.3, 0.6, 0.5, 0.8), 2, 1)]
        repaired, report = check_stage1(proposal, plan, history, CheckerConfig())
        assert [p.descriptor_id for p in repaired] == ["lamp"]
        # the violating subject lives in history, so it is reported but kept
        assert any(v.kind == "RelationUnsatisfied" for v in report.violations_after)

    def test_repair_never_breaks_satisfied_relation(self):
        rels = [Relation("b", "a", "right-of"), Relation("b", "c", "left-of")]
        plan = make_plan(["a", "b", "c"], rels)
        proposal = [
            ("a", (0.05, 0.4, 0.2, 0.6), 1, 0),
            ("b", (0.4, 0.4, 0.55, 0.6), 1, 1),  # satisfies right-of a
            ("c", (0.1, 0.1, 0.2, 0.2), 1, 2),  # b left-of c fails
        ]
        boxes_before = {did: BBox(*c) for did, c, _, _ in proposal}
        repaired, _ = check_stage1(proposal, plan, LayoutSet())
        out = {p.descriptor_id: p.bbox for p in repaired}
        # whatever happened, the already-satisfied relation must survive
        assert boxes_satisfy("right-of", out["b"], out["a"])
        assert boxes_satisfy("right-of", boxes_before["b"], boxes_before["a"])


class TestTranslatedToIoU:
    def test_reaches_target(self):
        mover = BBox(0.2, 0.2, 0.7, 0.7)
        fixed = BBox(0.1, 0.1, 0.6, 0.6)
        out = _translated_to_iou(mover, fixed, 0.4)
        assert out is not None
        assert bbox_iou(out, fixed) <= 0.4 + 1e-9

    def test_translation_only(self):
        mover = BBox(0.2, 0.2, 0.7, 0.7)
        fixed = BBox(0.1, 0.1, 0.6, 0.6)
        out = _translated_to_iou(mover, fixed, 0.4)
        assert out.width == pytest.approx(mover.width, abs=1e-9)
        assert out.height == pytest.approx(mover.height, abs=1e-9)

    def test_disjoint_returns_none(self):
        assert _translated_to_iou(BBox(0, 0, 0.2, 0.2), BBox(0.6, 0.6, 0.9, 0.9), 0.4) is None

    def test_minimal_among_axis_translations(self):
        # the chosen displacement is never longer than any axis translation
        # found by exhaustive search over a fine displacement grid
        rng = random.Random(3)
        for _ in range(50):
            mover, fixed = random_box(rng, 0.1), random_box(rng, 0.1)
            target = 0.3
            out = _translated_to_iou(mover, fixed, target)
            if out is None:
                continue
            chosen = max(abs(out.x_min - mover.x_min), abs(out.y_min - mover.y_min))
            best = None
            for d_i in range(1, 2001):
                d = d_i / 1000.0
                for dx, dy in ((d, 0), (-d, 0), (0, d), (0, -d)):
                    x0, y0 = mover.x_min + dx, mover.y_min + dy
                    x1, y1 = mover.x_max + dx, mover.y_max + dy
                    if x0 < 0 or y0 < 0 or x1 > 1 or y1 > 1:
                        continue
                    if bbox_iou(BBox(x0, y0, x1, y1), fixed) <= target:
                        best = d
                        break
                if best is not None:
                    break
            if best is not None:
                assert chosen <= best + 1e-3


class TestStage2:
    def test_overlap_repair(self):
        plan = make_plan(["a", "b"])
        layout = LayoutSet(
            placed=(placed("a", (0.1, 0.1, 0.6, 0.6), 1, 0), placed("b", (0.2, 0.2, 0.7, 0.7), 2, 1))
        )
        refined, report = check_stage2(layout, plan)
        out = {p.descriptor_id: p.bbox for p in refined.placed}
        assert bbox_iou(out["a"], out["b"]) <= 0.4 + 1e-9
        assert any(v.kind == "OverlapExcess" for v in report.violations_before)
        assert report.violations_after == []
        # the earlier-placed box is authoritative
        assert out["a"] == BBox(0.1, 0.1, 0.6, 0.6)

    def test_overlap_exempt_for_inside_pair(self):
        rel = Relation("bear", "box", "inside")
        plan = make_plan(["bear", "box"], [rel])
        layout = LayoutSet(
            placed=(placed("box", (0.2, 0.2, 0.8, 0.8), 1, 0), placed("bear", (0.3, 0.3, 0.7, 0.7), 2, 1))
        )
        _, report = check_stage2(layout, plan)
        assert report.violations_before == []

    def test_occlusion_swap(self):
        rel = Relation("dog", "fence", "behind")
        plan = make_plan(["dog", "fence"], [rel])
        layout = LayoutSet(
            placed=(placed("fence", (0.1, 0.5, 0.9, 0.8), 1, 2), placed("dog", (0.3, 0.4, 0.5, 0.7), 2, 5))
        )
        refined, report = check_stage2(layout, plan)
        zs = {p.descriptor_id: p.z_order for p in refined.placed}
        assert zs == {"dog": 2, "fence": 5}
        assert any(v.kind == "OcclusionOrderConflict" for v in report.violations_before)
        assert report.violations_after == []

    def test_scale_drift_rescaled_to_boundary(self):
        # cat#1 area 0.04, cat#2 area 0.25: ratio 6.25 exceeds 2.0, so the
        # later cat is rescaled to area 0.08 (ratio exactly 2.0)
        plan = make_plan(["cat#1", "cat#2"], names={"cat#1": "cat", "cat#2": "cat"})
        layout = LayoutSet(
            placed=(
                placed("cat#1", (0.1, 0.1, 0.3, 0.3), 1, 0),
                placed("cat#2", (0.4, 0.4, 0.9, 0.9), 2, 1),
            )
        )
        refined, report = check_stage2(layout, plan)
        out = {p.descriptor_id: p.bbox for p in refined.placed}
        assert bbox_area(out["cat#1"]) == pytest.approx(0.04, abs=1e-12)
        assert bbox_area(out["cat#2"]) == pytest.approx(0.08, abs=1e-9)
        assert any(v.kind == "ScaleDrift" for v in report.violations_before)
        assert report.violations_after == []

    def test_different_names_do_not_drift(self):
        plan = make_plan(["cat", "house"])
        layout = LayoutSet(
            placed=(placed("cat", (0.1, 0.1, 0.25, 0.25), 1, 0), placed("house", (0.4, 0.3, 0.95, 0.95), 2, 1))
        )
        _, report = check_stage2(layout, plan)
        assert not any(v.kind == "ScaleDrift" for v in report.violations_before)

    def test_passes_bounded_by_config(self):
        plan = make_plan(["a", "b"])
        layout = LayoutSet(
            placed=(placed("a", (0.1, 0.1, 0.6, 0.6), 1, 0), placed("b", (0.2, 0.2, 0.7, 0.7), 2, 1))
        )
        _, report = check_stage2(layout, plan, CheckerConfig(max_passes=3))
        assert report.passes_used <= 3


class TestMerge:
    def test_z_collision_reassigned(self):
        history = LayoutSet(placed=(placed("a", (0.1, 0.1, 0.3, 0.3), 1, 0),))
        merged = merge_layout(history, [placed("b", (0.5, 0.5, 0.7, 0.7), 2, 0)])
        zs = {p.descriptor_id: p.z_order for p in merged.placed}
        assert zs == {"a": 0, "b": 1}

    def test_disjoint_z_kept(self):
        history = LayoutSet(placed=(placed("a", (0.1, 0.1, 0.3, 0.3), 1, 0),))
        merged = merge_layout(history, [placed("b", (0.5, 0.5, 0.7, 0.7), 2, 7)])
        zs = {p.descriptor_id: p.z_order for p in merged.placed}
        assert zs == {"a": 0, "b": 7}


class TestFullCheck:
    def test_disabled_config_is_passthrough(self):
        plan = make_plan(["wall"])
        proposal = [("wall", (0.0, 0.0, 1.0, 1.0), 1, 0)]
        merged, report = full_check(proposal, plan, LayoutSet(), CheckerConfig(enabled=False))
        assert merged.placed[0].bbox == BBox(0.0, 0.0, 1.0, 1.0)
        assert report.violations_before == [] and report.repairs_applied == []

    def test_reports_merged_across_stages(self):
        rel = Relation("dog", "fence", "behind")
        plan = make_plan(["dog", "fence"], [rel])
        proposal = [
            ("dog", (-0.1, 0.4, 0.5, 0.7), 1, 5),
            ("fence", (0.1, 0.5, 0.9, 0.8), 1, 2),
        ]
        _, report = full_check(proposal, plan, LayoutSet())
        kinds = {v.kind for v in report.violations_before}
        assert "OutOfBounds" in kinds and "OcclusionOrderConflict" in kinds

    def test_idempotent_on_fuzzed_layouts(self):
        rng = random.Random(21)
        kinds = ("left-of", "right-of", "above", "below", "next-to", "on-top-of", "inside")
        for trial in range(300):
            n = rng.randint(1, 5)
            ids = [f"o{i}" for i in range(n)]
            rels = []
            for _ in range(rng.randint(0, 3)):
                if n < 2:
                    break
                s, o = rng.sample(ids, 2)
                if not any(r.subject_id == s and r.object_id == o for r in rels):
                    rels.append(Relation(s, o, rng.choice(kinds)))
            names = {}
            if n >= 2 and rng.random() < 0.3:
                names[ids[0]] = "twin"
                names[ids[1]] = "twin"
            plan = make_plan(ids, rels, names)
            proposal = [
                (ids[i], tuple(_raw_coords(rng)), 1, i) for i in range(n)
            ]
            once, rep1 = full_check(proposal, plan, LayoutSet())
            twice, rep2 = full_check(list(once.placed), plan, LayoutSet())
            assert twice == once, f"trial {trial} not idempotent"
            after1 = {(v.kind,) + tuple(v.subjects) for v in rep1.violations_after}
            after2 = {(v.kind,) + tuple(v.subjects) for v in rep2.violations_after}
            assert after2 <= after1, f"trial {trial} regressed"


def _raw_coords(rng):
    x0, x1 = sorted(rng.uniform(-0.2, 1.2) for _ in range(2))
    y0, y1 = sorted(rng.uniform(-0.2, 1.2) for _ in range(2))
    return (x0, y0, x1, y1)


class TestViolationModel:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Violation("Wobbly", ("a",), 0.0, 0.0, 1)

    def test_report_round_trips_to_json(self):
        v = Violation("TooSmall", ("a",), 0.001, 0.002, 1)
        report = CheckReport(violations_before=[v], repairs_applied=[(v, "rescaled a")])
        d = report.to_json()
        assert d["violations_before"][0]["kind"] == "TooSmall"
        assert d["repairs_applied"][0][1] == "rescaled a"
