import json
import math

import pytest

from scenedraw.gateway import FixtureStore, Gateway, ModelResponse, fixture_key
from scenedraw.geometry import BBox, LayoutSet, ObjectDescriptor, PlacedObject, Relation
from scenedraw.interpreter import PriorityGroup
from scenedraw.painter import CanvasState
from scenedraw.planner import (
    GRID_FALLBACK_BUDGET,
    GRID_FALLBACK_MAX_AREA,
    GroundingEntry,
    GroundingMap,
    PlanningContext,
    ProposalParseError,
    build_vcot_request,
    grid_fallback,
    ground_existing,
    load_template,
    propose_layout,
    relation_pairs_in_request,
)


def descriptor(did, priority=1, relations=(), caption=""):
    return ObjectDescriptor(id=did, name=did, priority=priority, relations=relations, enriched_caption=caption)


def group_of(*ids, priority=1, relations={}):
    members = tuple(
        descriptor(d, priority=priority, relations=tuple(relations.get(d, ()))) for d in ids
    )
    return PriorityGroup(priority, members)


def ctx_for(group, history=None, canvas=None, visual=True, iteration=1):
    history = history or LayoutSet()
    return PlanningContext(
        prompt_text="a test scene",
        group=group,
        history=history,
        canvas=canvas,
        grounding=ground_existing(canvas, history),
        visual_context_enabled=visual,
        iteration=iteration,
    )


class TestTemplate:
    def test_sections_in_order(self):
        t = load_template()
        a = t.index("[CANVAS STATE ANALYSIS]")
        b = t.index("[CONTEXT-AWARE PLANNING]")
        c = t.index("[PHYSICS CONSTRAINTS]")
        assert a < b < c

    def test_placeholders_present(self):
        t = load_template()
        for ph in ("{prompt}", "{grounding}", "{group_listing}", "{constraints}"):
            assert ph in t


class TestRequestAssembly:
    def test_sections_and_content(self):
        rels = {"lamp": (Relation("lamp", "desk", "above"),)}
        group = group_of("lamp", relations=rels)
        history = LayoutSet(placed=(PlacedObject("desk", BBox(0.2, 0.6, 0.8, 0.9), 1, 0),))
        req = build_vcot_request(ctx_for(group, history=history, iteration=2))
        assert req.role_tag == "planner"
        assert req.response_schema_id == "layout-proposal"
        text = req.user_text
        assert text.index("[CANVAS STATE ANALYSIS]") < text.index("[CONTEXT-AWARE PLANNING]") < text.index(
            "[PHYSICS CONSTRAINTS]"
        )
        assert "a test scene" in text
        assert "- desk: [0.200, 0.600, 0.800, 0.900]" in text
        assert "- lamp must be above desk" in text

    def test_empty_canvas_grounding_text(self):
        req = build_vcot_request(ctx_for(group_of("cat")))
        assert "(canvas is empty)" in req.user_text
        assert "- none" in req.user_text  # no constraints

    def test_image_attached_only_with_visual_context_and_canvas(self):
        canvas = CanvasState(iteration=1, image_png=b"\x89PNGfake")
        with_img = build_vcot_request(ctx_for(group_of("cat"), canvas=canvas, iteration=2))
        assert with_img.images == (b"\x89PNGfake",)
        no_visual = build_vcot_request(ctx_for(group_of("cat"), canvas=canvas, visual=False, iteration=2))
        assert no_visual.images == ()
        no_canvas = build_vcot_request(ctx_for(group_of("cat")))
        assert no_canvas.images == ()

    def test_history_iteration_guard(self):
        history = LayoutSet(placed=(PlacedObject("desk", BBox(0.2, 0.6, 0.8, 0.9), 2, 0),))
        with pytest.raises(ValueError):
            ctx_for(group_of("lamp"), history=history, iteration=1)


class TestGrounding:
    def test_echo_uses_planned_boxes(self):
        box = BBox(0.1, 0.1, 0.4, 0.4)
        history = LayoutSet(placed=(PlacedObject("cat", box, 1, 0),))
        gm = ground_existing(None, history)
        assert gm.entries == (GroundingEntry("cat", box, 1.0),)

    def test_detector_override(self):
        box = BBox(0.1, 0.1, 0.4, 0.4)
        shifted = BBox(0.15, 0.1, 0.45, 0.4)
        history = LayoutSet(placed=(PlacedObject("cat", box, 1, 0),))
        canvas = CanvasState(iteration=1, image_png=b"img")

        def detector(cv, hist):
            return [GroundingEntry("cat", shifted, 0.8)]

        gm = ground_existing(canvas, history, detector)
        assert gm.entries[0].bbox == shifted
        assert gm.entries[0].confidence == 0.8

    def test_detector_failure_degrades_to_echo(self):
        box = BBox(0.1, 0.1, 0.4, 0.4)
        history = LayoutSet(placed=(PlacedObject("cat", box, 1, 0),))
        canvas = CanvasState(iteration=1, image_png=b"img")

        def broken(cv, hist):
            raise RuntimeError("no detector weights")

        gm = ground_existing(canvas, history, broken)
        assert gm.entries[0].bbox == box
        assert gm.entries[0].confidence == 1.0


class TestRelationPairBound:
    @pytest.mark.parametrize(
        "g,h,expected",
        [(1, 0, 0), (2, 0, 1), (3, 0, 3), (2, 3, 7), (4, 4, 22)],
    )
    def test_formula(self, g, h, expected):
        assert relation_pairs_in_request(g, h) == expected


class TestGridFallback:
    def test_two_objects_analytic(self):
        placements = grid_fallback(group_of("a", "b"), LayoutSet(), iteration=1)
        side = math.sqrt(GRID_FALLBACK_MAX_AREA)  # 0.8 / 2 = 0.4 > cap 0.15
        assert len(placements) == 2
        for p, cx in zip(placements, (1 / 3, 2 / 3)):
            assert p.bbox.center_x == pytest.approx(cx, abs=1e-12)
            assert p.bbox.center_y == pytest.approx(0.5, abs=1e-12)
            assert p.bbox.width == pytest.approx(side, abs=1e-12)
            assert p.bbox.height == pytest.approx(side, abs=1e-12)

    def test_many_objects_budget_shrinks_boxes(self):
        placements = grid_fallback(group_of(*[f"o{i}" for i in range(8)]), LayoutSet(), 1)
        area = placements[0].bbox.width * placements[0].bbox.height
        assert area == pytest.approx(GRID_FALLBACK_BUDGET / 8, abs=1e-12)
        for p in placements:
            assert 0.0 <= p.bbox.x_min and p.bbox.x_max <= 1.0

    def test_z_orders_extend_history(self):
        history = LayoutSet(placed=(PlacedObject("x", BBox(0, 0, 0.2, 0.2), 1, 4),))
        placements = grid_fallback(group_of("a", "b"), history, 2)
        assert [p.z_order for p in placements] == [5, 6]

    def test_deterministic(self):
        a = grid_fallback(group_of("a", "b", "c"), LayoutSet(), 1)
        b = grid_fallback(group_of("a", "b", "c"), LayoutSet(), 1)
        assert a == b


def seeded_gateway(ctx, payload):
    store = FixtureStore()
    req = build_vcot_request(ctx)
    raw = json.dumps(payload)
    store.put(fixture_key(req), ModelResponse(raw, payload).to_json())
    return Gateway(mode="replay", fixtures=store)


class TestProposeLayout:
    def test_parses_model_placements(self):
        ctx = ctx_for(group_of("cat", "dog"))
        payload = {
            "placements": [
                {"id": "cat", "bbox": [0.1, 0.1, 0.4, 0.4], "z_order": 0},
                {"id": "dog", "bbox": [0.5, 0.5, 0.9, 0.9], "z_order": 1},
            ]
        }
        placements, warnings = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert warnings == []
        assert [p.descriptor_id for p in placements] == ["cat", "dog"]
        assert placements[0].bbox == BBox(0.1, 0.1, 0.4, 0.4)
        assert placements[0].iteration == 1

    def test_out_of_range_box_clamped_with_warning(self):
        ctx = ctx_for(group_of("cat"))
        payload = {"placements": [{"id": "cat", "bbox": [-0.1, 0.2, 0.4, 1.3], "z_order": 0}]}
        placements, warnings = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert placements[0].bbox == BBox(0.0, 0.2, 0.4, 1.0)
        assert any("clamped" in w for w in warnings)

    def test_unknown_and_duplicate_ids_dropped(self):
        ctx = ctx_for(group_of("cat"))
        payload = {
            "placements": [
                {"id": "cat", "bbox": [0.1, 0.1, 0.4, 0.4], "z_order": 0},
                {"id": "cat", "bbox": [0.2, 0.2, 0.5, 0.5], "z_order": 1},
                {"id": "ghost", "bbox": [0.6, 0.6, 0.9, 0.9], "z_order": 2},
            ]
        }
        placements, warnings = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert [p.descriptor_id for p in placements] == ["cat"]
        assert placements[0].bbox == BBox(0.1, 0.1, 0.4, 0.4)
        assert any("duplicate" in w for w in warnings)
        assert any("unknown" in w for w in warnings)

    def test_missing_member_grid_filled(self):
        ctx = ctx_for(group_of("cat", "dog"))
        payload = {"placements": [{"id": "cat", "bbox": [0.1, 0.1, 0.4, 0.4], "z_order": 0}]}
        placements, warnings = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert [p.descriptor_id for p in placements] == ["cat", "dog"]
        assert any("grid-filled" in w for w in warnings)

    def test_all_missing_falls_back_to_grid(self):
        ctx = ctx_for(group_of("cat", "dog"))
        payload = {"placements": [{"id": "ghost", "bbox": [0.1, 0.1, 0.4, 0.4], "z_order": 0}]}
        placements, warnings = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert placements == grid_fallback(ctx.group, ctx.history, ctx.iteration)
        assert any("ProposalParseError" in w for w in warnings)

    def test_fixture_miss_falls_back_to_grid(self):
        ctx = ctx_for(group_of("cat", "dog"))
        placements, warnings = propose_layout(ctx, Gateway(mode="replay", fixtures=FixtureStore()))
        assert placements == grid_fallback(ctx.group, ctx.history, ctx.iteration)
        assert any("FixtureMiss" in w for w in warnings)

    def test_no_gateway_uses_grid(self):
        ctx = ctx_for(group_of("cat"))
        placements, warnings = propose_layout(ctx, None)
        assert placements == grid_fallback(ctx.group, ctx.history, ctx.iteration)
        assert warnings == ["grid fallback: no gateway"]

    def test_colliding_z_order_reassigned(self):
        history = LayoutSet(placed=(PlacedObject("desk", BBox(0.2, 0.6, 0.8, 0.9), 1, 0),))
        ctx = ctx_for(group_of("lamp"), history=history, iteration=2)
        payload = {"placements": [{"id": "lamp", "bbox": [0.3, 0.2, 0.5, 0.5], "z_order": 0}]}
        placements, _ = propose_layout(ctx, seeded_gateway(ctx, payload))
        assert placements[0].z_order == 1
