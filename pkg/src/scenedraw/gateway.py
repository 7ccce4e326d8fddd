"""Uniform client for chat and vision-chat model endpoints.

Supports three modes: live (HTTP call), record (live call plus fixture
persisted), and replay (fixture lookup, zero network). Every other module
talks to models through this gateway so the whole pipeline is testable
offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import jsonschema

from . import schemas

RETRIES = 3
BACKOFF_INITIAL_S = 0.5
SCHEMA_REPROMPTS = 2

REPAIR_SUFFIX = "respond with valid JSON only"

ROLE_TAGS = ("interpreter", "planner", "checker-advisory")


class FixtureMiss(KeyError):
    """Replay mode found no fixture for the request key."""


class Transport(Exception):
    """Network failure that persisted through retries."""


class SchemaViolation(Exception):
    """Model output failed schema validation after all re-prompts."""


@dataclass(frozen=True)
class ModelRequest:
    role_tag: str
    system_text: str
    user_text: str
    images: tuple = ()  # raw image bytes, order is semantic
    response_schema_id: str = "mode-decision"

    def __post_init__(self):
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role_tag: {self.role_tag!r}")
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.images and self.role_tag != "planner":
            raise ValueError("images allowed only on planner requests")
        object.__setattr__(self, "images", tuple(self.images))


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    parsed: Optional[object] = None
    latency_ms: float = 0.0
    token_counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "raw_text": self.raw_text,
            "parsed": self.parsed,
            "latency_ms": self.latency_ms,
            "token_counts": dict(self.token_counts),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModelResponse":
        return cls(
            raw_text=d["raw_text"],
            parsed=d.get("parsed"),
            latency_ms=d.get("latency_ms", 0.0),
            token_counts=d.get("token_counts", {}),
        )


def fixture_key(req: ModelRequest) -> str:
    """Stable content hash of a request; images hashed by content."""
    payload = {
        "role_tag": req.role_tag,
        "system_text": req.system_text,
        "user_text": req.user_text,
        "images": [hashlib.sha256(img).hexdigest() for img in req.images],
        "response_schema_id": req.response_schema_id,
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class FixtureStore:
    """JSONL-backed map from request key to recorded response."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._entries[entry["key"]] = entry["response"]

    def get(self, key: str) -> Optional[dict]:
        return self._entries.get(key)

    def put(self, key: str, response: dict) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    fh.write(json.dumps({"key": key, "response": response}, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


def http_transport(endpoint: str, auth_env: str = "SCENEDRAW_API_TOKEN", timeout: float = 60.0) -> Callable:
    """Default transport: POST the request as JSON to a chat endpoint."""
    import httpx

    def call(req: ModelRequest) -> str:
        headers = {}
        token = os.environ.get(auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "system": req.system_text,
            "user": req.user_text,
            "images_b64": [__import__("base64").b64encode(i).decode() for i in req.images],
        }
        resp = httpx.post(endpoint, json=body, headers=headers, timeout=timeout)
        resp.raise_for_status()
        return resp.json()["text"]

    return call


class Gateway:
    """Shareable model client with record/replay fixtures.

    transport is any callable (ModelRequest) -> raw response text; tests
    inject stubs, production uses http_transport.
    """

    def __init__(
        self,
        mode: str = "replay",
        fixtures: Optional[FixtureStore] = None,
        transport: Optional[Callable] = None,
        sleep: Callable = time.sleep,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode: {mode!r}")
        self.mode = mode
        self.fixtures = fixtures if fixtures is not None else FixtureStore()
        self.transport = transport
        self._sleep = sleep

    def send(self, req: ModelRequest) -> ModelResponse:
        key = fixture_key(req)
        if self.mode == "replay":
            entry = self.fixtures.get(key)
            if entry is None:
                raise FixtureMiss(key)
            return ModelResponse.from_json(entry)
        response = self._send_live(req)
        if self.mode == "record":
            self.fixtures.put(key, response.to_json())
        return response

    def _send_live(self, req: ModelRequest) -> ModelResponse:
        if self.transport is None:
            raise Transport("no transport configured")
        current = req
        last_error = None
        for attempt in range(SCHEMA_REPROMPTS + 1):
            raw = self._call_with_retries(current)
            parsed = _try_parse(req.response_schema_id, raw)
            if parsed is not None:
                return ModelResponse(raw_text=raw, parsed=parsed)
            last_error = raw
            current = ModelRequest(
                role_tag=req.role_tag,
                system_text=req.system_text,
                user_text=req.user_text + "\n\n" + REPAIR_SUFFIX,
                images=req.images,
                response_schema_id=req.response_schema_id,
            )
        raise SchemaViolation(f"unparseable after {SCHEMA_REPROMPTS} re-prompts: {last_error[:200]}")

    def _call_with_retries(self, req: ModelRequest) -> str:
        delay = BACKOFF_INITIAL_S
        for attempt in range(RETRIES):
            try:
                start = time.monotonic()
                return self.transport(req)
            except Exception as exc:  # transport failures only
                if attempt == RETRIES - 1:
                    raise Transport(str(exc)) from exc
                self._sleep(delay)
                delay *= 2


def _try_parse(schema_id: str, raw: str):
    try:
        value = json.loads(raw)
    except (ValueError, TypeError):
        return None
    try:
        schemas.validate(schema_id, value)
    except jsonschema.ValidationError:
        return None
    return value
