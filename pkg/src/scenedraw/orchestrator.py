"""Drives one generation job end to end and records a replayable transcript.

Layout-free path: interpret, then one text-to-image paint. Layout-aware
path: interpret once, then one planner proposal, one checker invocation,
and one painter step per priority group. The checker runs locally but is
counted as a call so per-agent accounting stays comparable across runs; a
flag can restrict counting to gateway-backed agents.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import gateway as gw
from . import painter as paint
from .checker import CheckerConfig, CheckReport, full_check, merge_layout
from .geometry import LayoutSet, Prompt
from .interpreter import Interpreter, ScenePlan
from .planner import GroundingMap, PlanningContext, ground_existing, propose_layout
from .painter import CanvasState, MockBackend, stable_color

TRANSCRIPT_VERSION = 1

AGENTS = ("interpreter", "planner", "checker", "painter")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    layout_aware_enabled: bool = True
    visual_context_enabled: bool = True
    checker_enabled: bool = True
    painter_backend: str = "mock"  # "mock" | "http"
    t2i_endpoint: str = ""
    l2i_endpoint: str = ""
    seed: int = 0
    resolution: int = paint.DEFAULT_RESOLUTION
    max_priority_levels: int = 8
    deterministic_clock: bool = True
    count_local_checker: bool = True
    fixtures_path: Optional[str] = None
    gateway_mode: str = "replay"
    force_mode: Optional[str] = None  # None | "aware"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)


@dataclass
class Transcript:
    prompt: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    status: str = "ok"  # "ok" | "failed"
    object_count: int = 0
    plan: Optional[dict] = None
    final_layout: Optional[dict] = None
    final_image_sha256: Optional[str] = None

    @property
    def counters(self) -> dict:
        counts = {agent: 0 for agent in AGENTS}
        for e in self.events:
            counts[e["agent"]] += 1
        return counts

    def add_event(self, agent: str, kind: str, request, response, clock) -> None:
        self.events.append(
            {
                "agent": agent,
                "kind": kind,
                "request": request,
                "response": response,
                "t": clock(),
            }
        )

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "type": "header",
                    "version": TRANSCRIPT_VERSION,
                    "prompt": self.prompt,
                    "config": self.config,
                },
                sort_keys=True,
            )
        ]
        for e in self.events:
            lines.append(json.dumps({"type": "event", **e}, sort_keys=True))
        lines.append(
            json.dumps(
                {
                    "type": "summary",
                    "status": self.status,
                    "counters": self.counters,
                    "object_count": self.object_count,
                    "plan": self.plan,
                    "final_layout": self.final_layout,
                    "final_image_sha256": self.final_image_sha256,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "Transcript":
        t = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["type"] == "header":
                t.prompt = obj["prompt"]
                t.config = obj["config"]
            elif obj["type"] == "event":
                t.events.append({k: v for k, v in obj.items() if k != "type"})
            elif obj["type"] == "summary":
                t.status = obj["status"]
                t.object_count = obj["object_count"]
                t.plan = obj.get("plan")
                t.final_layout = obj.get("final_layout")
                t.final_image_sha256 = obj.get("final_image_sha256")
        return t


@dataclass
class GenerationResult:
    canvas: Optional[CanvasState]
    transcript: Transcript


def _make_clock(cfg: RunConfig):
    if cfg.deterministic_clock:
        counter = iter(range(10**9))
        return lambda: next(counter)
    return lambda: time.time()


def _backends(cfg: RunConfig):
    if cfg.painter_backend == "mock":
        backend = MockBackend(seed=cfg.seed, resolution=cfg.resolution)
        return backend, backend
    if cfg.painter_backend == "http":
        t2i = paint.HttpBackend(kind="t2i-http", endpoint=cfg.t2i_endpoint, seed=cfg.seed, resolution=cfg.resolution)
        l2i = paint.HttpBackend(kind="l2i-http", endpoint=cfg.l2i_endpoint, seed=cfg.seed, resolution=cfg.resolution)
        return t2i, l2i
    raise ConfigError(f"unknown painter backend: {cfg.painter_backend!r}")


def _image_digest(data: Optional[bytes]) -> Optional[str]:
    return hashlib.sha256(data).hexdigest() if data else None


def generate(
    prompt: Prompt,
    cfg: RunConfig = RunConfig(),
    model_gateway: Optional[gw.Gateway] = None,
    t2i=None,
    l2i=None,
    checker_config: CheckerConfig = CheckerConfig(),
    strict_gateway: bool = False,
) -> GenerationResult:
    clock = _make_clock(cfg)
    transcript = Transcript(prompt={"text": prompt.text, "id": prompt.id}, config=cfg.to_json())
    default_t2i, default_l2i = _backends(cfg)
    t2i = t2i or default_t2i
    l2i = l2i or default_l2i

    try:
        return _generate_inner(
            prompt, cfg, model_gateway, t2i, l2i, checker_config, transcript, clock, strict_gateway
        )
    except gw.FixtureMiss:
        transcript.status = "failed"
        raise
    except Exception:
        transcript.status = "failed"
        return GenerationResult(canvas=None, transcript=transcript)


def _generate_inner(prompt, cfg, model_gateway, t2i, l2i, checker_config, transcript, clock, strict):
    interpreter = Interpreter(model_gateway, strict=strict)
    plan = interpreter.interpret(prompt, force_mode=cfg.force_mode)
    if not cfg.layout_aware_enabled and plan.mode == "layout-aware":
        plan = ScenePlan(mode="layout-free", background=prompt.text, source_prompt_id=prompt.id)
    transcript.plan = plan.to_json()
    transcript.object_count = len(plan.descriptors())
    transcript.add_event(
        "interpreter",
        "interpret",
        {"prompt": prompt.text},
        {"mode": plan.mode, "groups": len(plan.groups), "objects": len(plan.descriptors())},
        clock,
    )

    if plan.mode == "layout-free":
        canvas = paint.paint_free(prompt, t2i)
        transcript.add_event(
            "painter",
            "paint_free",
            {"prompt": prompt.text},
            {"image_sha256": _image_digest(canvas.image_png)},
            clock,
        )
        transcript.final_layout = canvas.layout_so_far.to_json()
        transcript.final_image_sha256 = _image_digest(canvas.image_png)
        return GenerationResult(canvas=canvas, transcript=transcript)

    captions = {d.id: d.enriched_caption or d.name for d in plan.descriptors()}
    colors = {d.id: stable_color(d.name, d.attributes) for d in plan.descriptors()}
    canvas = CanvasState(background=plan.background)
    history = LayoutSet()
    groups = plan.groups[: cfg.max_priority_levels]

    for idx, group in enumerate(groups):
        iteration = idx + 1
        grounding = ground_existing(canvas, history)
        ctx = PlanningContext(
            prompt_text=prompt.text,
            group=group,
            history=history,
            canvas=canvas if cfg.visual_context_enabled else None,
            grounding=grounding,
            visual_context_enabled=cfg.visual_context_enabled,
            iteration=iteration,
        )
        if strict and model_gateway is not None:
            placements, warnings = _strict_propose(ctx, model_gateway)
        else:
            placements, warnings = propose_layout(ctx, model_gateway)
        transcript.add_event(
            "planner",
            "propose_layout",
            {
                "iteration": iteration,
                "group_priority": group.priority,
                "member_ids": [m.id for m in group.members],
                "image_attached": bool(ctx.visual_context_enabled and canvas.image_png),
                "grounding_entries": len(grounding.entries),
            },
            {
                "placements": [p.to_json() for p in placements],
                "warnings": warnings,
            },
            clock,
        )

        if cfg.checker_enabled:
            refined, report = full_check(placements, plan, history, checker_config)
            if cfg.count_local_checker:
                transcript.add_event(
                    "checker",
                    "full_check",
                    {"iteration": iteration, "proposal_ids": [p.descriptor_id for p in placements]},
                    report.to_json(),
                    clock,
                )
        else:
            refined = merge_layout(history, placements)

        canvas = paint.advance(canvas, refined, captions, l2i, colors)
        transcript.add_event(
            "painter",
            "paint_step",
            {"iteration": iteration, "layout_size": len(refined.placed)},
            {"image_sha256": _image_digest(canvas.image_png)},
            clock,
        )
        history = refined

    transcript.final_layout = history.to_json()
    transcript.final_image_sha256 = _image_digest(canvas.image_png)
    return GenerationResult(canvas=canvas, transcript=transcript)


def _strict_propose(ctx, model_gateway):
    from .planner import build_vcot_request, _parse_placements

    warnings: list[str] = []
    resp = model_gateway.send(build_vcot_request(ctx))  # FixtureMiss propagates
    return _parse_placements(resp.parsed, ctx, warnings), warnings


def replay(transcript_path, fixtures_path: Optional[str] = None) -> GenerationResult:
    """Re-run a transcript's job from its recorded config and fixtures."""
    recorded = Transcript.load(transcript_path)
    cfg = RunConfig.from_json(recorded.config)
    prompt = Prompt(text=recorded.prompt["text"], id=recorded.prompt.get("id", "prompt"))
    fixtures = fixtures_path or cfg.fixtures_path
    model_gateway = None
    strict = False
    if fixtures:
        model_gateway = gw.Gateway(mode="replay", fixtures=gw.FixtureStore(Path(fixtures)))
        strict = True
    return generate(prompt, cfg, model_gateway=model_gateway, strict_gateway=strict)
