"""FastAPI service wrapping the generation pipeline.

The CLI is a thin client of these endpoints; it either calls the handler
functions in-process or posts to a running server. Handlers are plain
functions over pydantic models so both paths share one implementation.
"""

from __future__ import annotations

import base64
import os
import tempfile
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import gateway as gw
from . import orchestrator
from .checker import CheckerConfig, full_check
from .evalharness import CorpusStats, aggregate, load_corpus
from .geometry import LayoutSet, Prompt
from .interpreter import ObjectDescriptor, PriorityGroup, ScenePlan
from .orchestrator import GenerationResult, RunConfig, Transcript

CHAT_ENDPOINT_ENV = "SCENEDRAW_CHAT_ENDPOINT"


class GenerateRequest(BaseModel):
    prompt_text: str
    prompt_id: str = "prompt"
    mode: str = "auto"  # auto | free | aware
    mock: bool = True
    layout_aware: bool = True
    visual_context: bool = True
    checker: bool = True
    seed: int = 0
    resolution: int = 1024
    fixtures_path: Optional[str] = None
    record_path: Optional[str] = None
    t2i_endpoint: str = ""
    l2i_endpoint: str = ""


class GenerateResponse(BaseModel):
    status: str
    counters: dict
    object_count: int
    transcript_jsonl: str
    image_b64: Optional[str] = None
    final_image_sha256: Optional[str] = None


class ReplayRequest(BaseModel):
    transcript_jsonl: str
    fixtures_path: Optional[str] = None


class CheckRequest(BaseModel):
    layout: dict
    plan: Optional[dict] = None
    config: dict = Field(default_factory=dict)


class CheckResponse(BaseModel):
    violations: list
    repaired_layout: dict
    report: dict


class EvalRequest(BaseModel):
    corpus_dir: Optional[str] = None
    transcripts_jsonl: list = Field(default_factory=list)


class EvalResponse(BaseModel):
    stats: dict
    csv: str


def _run_config(req: GenerateRequest) -> RunConfig:
    layout_aware = req.layout_aware and req.mode != "free"
    return RunConfig(
        layout_aware_enabled=layout_aware,
        visual_context_enabled=req.visual_context,
        checker_enabled=req.checker,
        painter_backend="mock" if req.mock else "http",
        t2i_endpoint=req.t2i_endpoint,
        l2i_endpoint=req.l2i_endpoint,
        seed=req.seed,
        resolution=req.resolution,
        deterministic_clock=req.mock,
        fixtures_path=req.record_path or req.fixtures_path,
        gateway_mode="record" if req.record_path else "replay",
        force_mode="aware" if req.mode == "aware" else None,
    )


def _gateway_for(req: GenerateRequest) -> Optional[gw.Gateway]:
    if req.record_path:
        endpoint = os.environ.get(CHAT_ENDPOINT_ENV)
        if not endpoint:
            raise orchestrator.ConfigError(f"record mode needs {CHAT_ENDPOINT_ENV}")
        return gw.Gateway(
            mode="record",
            fixtures=gw.FixtureStore(Path(req.record_path)),
            transport=gw.http_transport(endpoint),
        )
    if req.fixtures_path:
        return gw.Gateway(mode="replay", fixtures=gw.FixtureStore(Path(req.fixtures_path)))
    if req.mock:
        return None  # rule-based fallbacks all the way down
    endpoint = os.environ.get(CHAT_ENDPOINT_ENV)
    if not endpoint:
        return None
    return gw.Gateway(mode="live", transport=gw.http_transport(endpoint))


def _to_generate_response(result: GenerationResult) -> GenerateResponse:
    t = result.transcript
    return GenerateResponse(
        status=t.status,
        counters=t.counters,
        object_count=t.object_count,
        transcript_jsonl=t.to_jsonl(),
        image_b64=(
            base64.b64encode(result.canvas.image_png).decode()
            if result.canvas and result.canvas.image_png
            else None
        ),
        final_image_sha256=t.final_image_sha256,
    )


def handle_generate(req: GenerateRequest) -> GenerateResponse:
    prompt = Prompt(text=req.prompt_text, id=req.prompt_id)
    cfg = _run_config(req)
    result = orchestrator.generate(prompt, cfg, model_gateway=_gateway_for(req))
    return _to_generate_response(result)


def handle_replay(req: ReplayRequest) -> GenerateResponse:
    with tempfile.NamedTemporaryFile("w", suffix=".jsonl", delete=False) as fh:
        fh.write(req.transcript_jsonl)
        path = fh.name
    try:
        result = orchestrator.replay(path, fixtures_path=req.fixtures_path)
    except gw.FixtureMiss as exc:
        raise HTTPException(status_code=422, detail=f"fixture miss: {exc}")
    finally:
        os.unlink(path)
    return _to_generate_response(result)


def _plan_from_layout(layout: dict) -> ScenePlan:
    ids = [p["descriptor_id"] for p in layout.get("placed", [])]
    members = tuple(
        ObjectDescriptor(id=did, name=did.split("#")[0], priority=1) for did in ids
    )
    if not members:
        raise ValueError("layout has no placed objects")
    return ScenePlan(mode="layout-aware", groups=(PriorityGroup(1, members),))


def handle_check(req: CheckRequest) -> CheckResponse:
    layout = req.layout
    plan = ScenePlan.from_json(req.plan) if req.plan else _plan_from_layout(layout)
    config = CheckerConfig(**req.config) if req.config else CheckerConfig()
    proposal = []
    for i, p in enumerate(layout.get("placed", [])):
        b = p["bbox"]
        coords = (
            (b["x_min"], b["y_min"], b["x_max"], b["y_max"])
            if isinstance(b, dict)
            else tuple(b)
        )
        proposal.append((p["descriptor_id"], coords, p.get("iteration", 1), p.get("z_order", i)))
    repaired, report = full_check(proposal, plan, LayoutSet(), config)
    return CheckResponse(
        violations=[v.to_json() for v in report.violations_before],
        repaired_layout=repaired.to_json(),
        report=report.to_json(),
    )


def handle_eval(req: EvalRequest) -> EvalResponse:
    transcripts = []
    if req.corpus_dir:
        transcripts.extend(load_corpus(req.corpus_dir))
    for content in req.transcripts_jsonl:
        with tempfile.NamedTemporaryFile("w", suffix=".jsonl", delete=False) as fh:
            fh.write(content)
            path = fh.name
        try:
            transcripts.append(Transcript.load(path))
        finally:
            os.unlink(path)
    if not transcripts:
        raise ValueError("no transcripts to evaluate")
    stats = aggregate(transcripts)
    return EvalResponse(stats=stats.to_json(), csv=stats.to_csv())


app = FastAPI(title="scenedraw", version="0.1.0")


@app.get("/healthz")
def healthz() -> dict:
    return {"status": "ok"}


@app.post("/generate", response_model=GenerateResponse)
def generate_endpoint(req: GenerateRequest) -> GenerateResponse:
    try:
        return handle_generate(req)
    except orchestrator.ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


@app.post("/replay", response_model=GenerateResponse)
def replay_endpoint(req: ReplayRequest) -> GenerateResponse:
    return handle_replay(req)


@app.post("/check", response_model=CheckResponse)
def check_endpoint(req: CheckRequest) -> CheckResponse:
    try:
        return handle_check(req)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


@app.post("/eval", response_model=EvalResponse)
def eval_endpoint(req: EvalRequest) -> EvalResponse:
    try:
        return handle_eval(req)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
