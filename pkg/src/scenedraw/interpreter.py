"""Prompt interpretation: mode selection, decomposition, ranking, enrichment.

Every operation has a rule-based fallback so the pipeline degrades
gracefully when no model gateway is configured. The gateway path and the
fallback path produce the same ScenePlan shape; plan invariants are
enforced on every output.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from . import gateway as gw
from .geometry import RELATION_KINDS, ObjectDescriptor, Prompt, Relation

MAX_COUNT_EXPANSION = 12


class EmptyDecomposition(Exception):
    """Model returned zero objects for a layout-aware prompt."""


@dataclass(frozen=True)
class PriorityGroup:
    priority: int
    members: tuple

    def __post_init__(self):
        if self.priority < 1:
            raise ValueError("priority must be >= 1")
        if not self.members:
            raise ValueError("group must be non-empty")
        object.__setattr__(self, "members", tuple(self.members))
        for m in self.members:
            if m.priority != self.priority:
                raise ValueError("member priority does not match group")

    def to_json(self) -> dict:
        return {"priority": self.priority, "members": [m.to_json() for m in self.members]}

    @classmethod
    def from_json(cls, d: dict) -> "PriorityGroup":
        return cls(d["priority"], tuple(ObjectDescriptor.from_json(m) for m in d["members"]))


@dataclass(frozen=True)
class ScenePlan:
    mode: str  # "layout-free" | "layout-aware"
    background: str = ""
    groups: tuple = ()
    source_prompt_id: str = ""

    def __post_init__(self):
        if self.mode not in ("layout-free", "layout-aware"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.mode == "layout-free" and self.groups:
            raise ValueError("layout-free plan must have no groups")
        if self.mode == "layout-aware":
            if not self.groups:
                raise ValueError("layout-aware plan needs at least one group")
            expected = list(range(1, len(self.groups) + 1))
            if [g.priority for g in self.groups] != expected:
                raise ValueError("group priorities must be consecutive from 1")
            ids = [m.id for g in self.groups for m in g.members]
            if len(ids) != len(set(ids)):
                raise ValueError("descriptor ids must be unique across groups")

    def descriptors(self) -> list:
        return [m for g in self.groups for m in g.members]

    def descriptor(self, descriptor_id: str) -> Optional[ObjectDescriptor]:
        for d in self.descriptors():
            if d.id == descriptor_id:
                return d
        return None

    def relations(self) -> list:
        return [r for d in self.descriptors() for r in d.relations]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "background": self.background,
            "groups": [g.to_json() for g in self.groups],
            "source_prompt_id": self.source_prompt_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ScenePlan":
        return cls(
            mode=d["mode"],
            background=d.get("background", ""),
            groups=tuple(PriorityGroup.from_json(g) for g in d.get("groups", [])),
            source_prompt_id=d.get("source_prompt_id", ""),
        )


# ---------------------------------------------------------------------------
# Rule-based text analysis (no model required)
# ---------------------------------------------------------------------------

RELATION_PHRASES = [
    ("to the left of", "left-of"),
    ("on the left of", "left-of"),
    ("left of", "left-of"),
    ("to the right of", "right-of"),
    ("on the right of", "right-of"),
    ("right of", "right-of"),
    ("on top of", "on-top-of"),
    ("in front of", "in-front-of"),
    ("next to", "next-to"),
    ("beside", "next-to"),
    ("near", "next-to"),
    ("above", "above"),
    ("over", "above"),
    ("below", "below"),
    ("under", "below"),
    ("beneath", "below"),
    ("underneath", "below"),
    ("behind", "behind"),
    ("inside", "inside"),
    ("within", "inside"),
    ("sitting on", "on-top-of"),
    ("standing on", "on-top-of"),
    ("lying on", "on-top-of"),
    ("placed on", "on-top-of"),
    ("resting on", "on-top-of"),
    (" on ", "on-top-of"),
    (" in ", "inside"),
]

NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}

COLOR_WORDS = {
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown",
    "black", "white", "gray", "grey", "golden", "silver", "teal", "cyan",
    "magenta", "beige", "turquoise", "violet",
}

ARTICLES = {"a", "an", "the", "some"}

PREAMBLES = [
    "a photo of", "a photograph of", "an image of", "a picture of",
    "a painting of", "a drawing of", "a rendering of", "photo of", "image of",
]


def _strip_preamble(text: str) -> str:
    t = text.strip().lower()
    for p in PREAMBLES:
        if t.startswith(p + " "):
            return t[len(p):].strip()
    return t


def _find_relation_split(text: str):
    """First relation phrase occurrence, or None. Returns (left, kind, right)."""
    best = None
    for phrase, kind in RELATION_PHRASES:
        needle = phrase if phrase.startswith(" ") else f" {phrase} "
        idx = f" {text} ".find(needle if phrase.startswith(" ") else needle)
        if idx >= 0:
            pos = idx  # position in padded string
            if best is None or pos < best[0]:
                left = f" {text} "[:idx].strip()
                right = f" {text} "[idx + len(needle):].strip()
                best = (pos, left, kind, right)
    if best is None:
        return None
    return best[1], best[2], best[3]


def _split_conjunctions(text: str) -> list:
    parts = re.split(r",| and ", text)
    return [p.strip() for p in parts if p.strip()]


@dataclass
class _Chunk:
    name: str
    attributes: list = field(default_factory=list)
    count: int = 1
    relations: list = field(default_factory=list)  # (kind, target_chunk_index)


def _parse_chunk(text: str) -> Optional[_Chunk]:
    words = [w for w in re.findall(r"[a-z0-9']+", text.lower())]
    words = [w for w in words if w not in ARTICLES]
    if not words:
        return None
    count = 1
    if words[0] in NUMBER_WORDS:
        count = NUMBER_WORDS[words[0]]
        words = words[1:]
    elif words[0].isdigit():
        count = max(1, int(words[0]))
        words = words[1:]
    if not words:
        return None
    name = words[-1]
    if count > 1 and name.endswith("s") and len(name) > 3:
        name = name[:-1]
    attrs = []
    for w in words[:-1]:
        key = "color" if w in COLOR_WORDS else "modifier"
        attrs.append((key, w))
    return _Chunk(name=name, attributes=attrs, count=count)


def _parse_scene(text: str) -> list:
    """Parse a prompt into chunks with relation edges between chunk indices."""
    t = _strip_preamble(text)
    chunks: list[_Chunk] = []

    def parse_segment(segment: str, relate_to: Optional[int]) -> None:
        split = _find_relation_split(segment)
        if split is not None:
            left, kind, right = split
            left_indices = add_plain(left)
            # the right side may itself chain further relations
            before = len(chunks)
            parse_segment(right, None)
            target = before if len(chunks) > before else None
            if target is not None:
                for idx in left_indices:
                    chunks[idx].relations.append((kind, target))
            return
        add_plain(segment)

    def add_plain(segment: str) -> list:
        indices = []
        for part in _split_conjunctions(segment):
            chunk = _parse_chunk(part)
            if chunk is not None:
                chunks.append(chunk)
                indices.append(len(chunks) - 1)
        return indices

    parse_segment(t, None)
    return chunks


def fallback_object_count(text: str) -> int:
    chunks = _parse_scene(text)
    return sum(c.count for c in chunks)


def fallback_has_spatial_cue(text: str) -> bool:
    return _find_relation_split(_strip_preamble(text)) is not None


def fallback_mode(text: str) -> str:
    """Heuristic mode choice: layout-aware on multi-object or spatial cues."""
    chunks = _parse_scene(text)
    total = sum(c.count for c in chunks)
    if total >= 2:
        return "layout-aware"
    if fallback_has_spatial_cue(text):
        return "layout-aware"
    return "layout-free"


# ---------------------------------------------------------------------------
# Dependency-rule correction
# ---------------------------------------------------------------------------


def enforce_dependency_rule(priorities: dict, relations: list):
    """Bump subject priorities so that priority(subject) >= priority(object).

    Relations that would create a cycle in the subject->object graph are
    dropped (first edge of a 2-cycle wins, earlier relations win in longer
    cycles). Returns (corrected priorities, kept relations).
    """
    kept = []
    adjacency: dict[str, set] = {}

    def reaches(src: str, dst: str, seen=None) -> bool:
        if src == dst:
            return True
        seen = seen or set()
        for nxt in adjacency.get(src, ()):
            if nxt not in seen:
                seen.add(nxt)
                if reaches(nxt, dst, seen):
                    return True
        return False

    for r in relations:
        if reaches(r.object_id, r.subject_id):
            continue  # dropping this edge keeps the graph acyclic
        adjacency.setdefault(r.subject_id, set()).add(r.object_id)
        kept.append(r)

    out = dict(priorities)
    changed = True
    while changed:
        changed = False
        for r in kept:
            if out.get(r.subject_id, 1) < out.get(r.object_id, 1):
                out[r.subject_id] = out[r.object_id] + 1
                changed = True
    return out, kept


def _compact_priorities(priorities: dict) -> dict:
    levels = sorted(set(priorities.values()))
    remap = {lvl: i + 1 for i, lvl in enumerate(levels)}
    return {k: remap[v] for k, v in priorities.items()}


def build_groups(descriptors: list) -> tuple:
    by_priority: dict[int, list] = {}
    for d in descriptors:
        by_priority.setdefault(d.priority, []).append(d)
    groups = []
    for priority in sorted(by_priority):
        groups.append(PriorityGroup(priority, tuple(by_priority[priority])))
    return tuple(groups)


def fallback_caption(name: str, attributes) -> str:
    values = [v for k, v in attributes if k in ("color", "modifier")]
    if not values:
        return name
    return "a " + " ".join(values) + " " + name


# ---------------------------------------------------------------------------
# Interpreter agent
# ---------------------------------------------------------------------------


class Interpreter:
    """Turns a Prompt into a ScenePlan, via gateway when available."""

    def __init__(self, model_gateway: Optional[gw.Gateway] = None, strict: bool = False):
        self.gateway = model_gateway
        # strict mode lets FixtureMiss propagate instead of falling back,
        # so replays fail loudly when a fixture has gone missing
        self._fallback_errors = (
            (gw.Transport, gw.SchemaViolation) if strict else (gw.FixtureMiss, gw.Transport, gw.SchemaViolation)
        )

    def interpret(self, prompt: Prompt, force_mode: Optional[str] = None) -> ScenePlan:
        mode = force_mode if force_mode == "layout-aware" or force_mode == "aware" else self.select_mode(prompt)
        if mode == "aware":
            mode = "layout-aware"
        if mode == "layout-free":
            return ScenePlan(mode="layout-free", background=prompt.text, source_prompt_id=prompt.id)
        try:
            descriptors = self.decompose(prompt)
        except EmptyDecomposition:
            return ScenePlan(mode="layout-free", background=prompt.text, source_prompt_id=prompt.id)
        descriptors = self.rank_and_group(descriptors)
        descriptors, background = self.enrich(descriptors, prompt)
        return ScenePlan(
            mode="layout-aware",
            background=background,
            groups=build_groups(descriptors),
            source_prompt_id=prompt.id,
        )

    # -- mode -------------------------------------------------------------

    def select_mode(self, prompt: Prompt) -> str:
        if self.gateway is not None:
            try:
                req = gw.ModelRequest(
                    role_tag="interpreter",
                    system_text="Decide whether the scene needs explicit layout planning.",
                    user_text=prompt.text,
                    response_schema_id="mode-decision",
                )
                resp = self.gateway.send(req)
                parsed = resp.parsed
                if parsed["layout_aware"] or parsed["object_count"] >= 2:
                    return "layout-aware"
                return "layout-free"
            except self._fallback_errors:
                pass
        return fallback_mode(prompt.text)

    # -- decomposition ----------------------------------------------------

    def decompose(self, prompt: Prompt) -> list:
        raw_objects = None
        if self.gateway is not None:
            raw_objects = self._gateway_decompose(prompt)
        if raw_objects is None:
            raw_objects = self._fallback_decompose(prompt)
        if not raw_objects:
            raise EmptyDecomposition(prompt.id)
        return raw_objects

    def _gateway_decompose(self, prompt: Prompt):
        req = gw.ModelRequest(
            role_tag="interpreter",
            system_text="Decompose the scene into objects with attributes and relations.",
            user_text=prompt.text,
            response_schema_id="decomposition",
        )
        try:
            resp = self.gateway.send(req)
            objects = resp.parsed["objects"]
            if not objects:
                # one re-prompt, then give up on the gateway path
                retry = gw.ModelRequest(
                    role_tag="interpreter",
                    system_text=req.system_text,
                    user_text=prompt.text + "\n\nList every distinct object.",
                    response_schema_id="decomposition",
                )
                objects = self.gateway.send(retry).parsed["objects"]
                if not objects:
                    raise EmptyDecomposition(prompt.id)
            return self._descriptors_from_payload(objects)
        except self._fallback_errors:
            return None

    def _descriptors_from_payload(self, objects: list) -> list:
        chunks = []
        for obj in objects:
            chunk = _Chunk(
                name=obj["name"],
                attributes=[(a[0], a[1]) for a in obj.get("attributes", [])],
                count=obj.get("count", 1),
            )
            chunk.raw_relations = obj.get("relations", [])
            chunks.append(chunk)
        return _expand_chunks(chunks, relation_targets_by_name=True)

    def _fallback_decompose(self, prompt: Prompt) -> list:
        chunks = _parse_scene(prompt.text)
        return _expand_chunks(chunks, relation_targets_by_name=False)

    # -- ranking ----------------------------------------------------------

    def rank_and_group(self, descriptors: list) -> list:
        priorities = None
        if self.gateway is not None:
            priorities = self._gateway_priorities(descriptors)
        if priorities is None:
            priorities = _dependency_depth_priorities(descriptors)
        return apply_priorities(descriptors, priorities)

    def _gateway_priorities(self, descriptors: list):
        listing = json.dumps([d.to_json() for d in descriptors], sort_keys=True)
        req = gw.ModelRequest(
            role_tag="interpreter",
            system_text=(
                "Assign priorities: larger, anchoring, background-adjacent objects first; "
                "objects without dependency order share a level."
            ),
            user_text=listing,
            response_schema_id="ranking",
        )
        try:
            resp = self.gateway.send(req)
            return {k: int(v) for k, v in resp.parsed["priorities"].items()}
        except self._fallback_errors:
            return None

    # -- enrichment -------------------------------------------------------

    def enrich(self, descriptors: list, prompt: Prompt):
        captions, background = None, None
        if self.gateway is not None:
            got = self._gateway_enrich(descriptors, prompt)
            if got is not None:
                captions, background = got
        out = []
        for d in descriptors:
            caption = (captions or {}).get(d.id) or fallback_caption(d.name, d.attributes)
            out.append(
                ObjectDescriptor(
                    id=d.id,
                    name=d.name,
                    attributes=d.attributes,
                    relations=d.relations,
                    priority=d.priority,
                    enriched_caption=caption,
                )
            )
        return out, (background if background else prompt.text)

    def _gateway_enrich(self, descriptors: list, prompt: Prompt):
        listing = json.dumps({"prompt": prompt.text, "objects": [d.to_json() for d in descriptors]}, sort_keys=True)
        req = gw.ModelRequest(
            role_tag="interpreter",
            system_text="Write a self-contained region caption per object and a background description.",
            user_text=listing,
            response_schema_id="enrichment",
        )
        try:
            resp = self.gateway.send(req)
            return resp.parsed["captions"], resp.parsed["background"]
        except self._fallback_errors:
            return None


def apply_priorities(descriptors: list, priorities: dict) -> list:
    """Apply model/fallback priorities, then the dependency correction."""
    relations = [r for d in descriptors for r in d.relations]
    corrected, kept = enforce_dependency_rule(
        {d.id: max(1, priorities.get(d.id, 1)) for d in descriptors}, relations
    )
    corrected = _compact_priorities(corrected)
    kept_set = set((r.subject_id, r.object_id, r.kind) for r in kept)
    out = []
    for d in descriptors:
        kept_rels = tuple(r for r in d.relations if (r.subject_id, r.object_id, r.kind) in kept_set)
        dropped = [r for r in d.relations if (r.subject_id, r.object_id, r.kind) not in kept_set]
        attrs = d.attributes + tuple(("relation_freeform", f"{r.kind} {r.object_id}") for r in dropped)
        out.append(
            ObjectDescriptor(
                id=d.id,
                name=d.name,
                attributes=attrs,
                relations=kept_rels,
                priority=corrected[d.id],
                enriched_caption=d.enriched_caption,
            )
        )
    return out


def _dependency_depth_priorities(descriptors: list) -> dict:
    """Anchors (relation targets) first, dependents later."""
    by_id = {d.id: d for d in descriptors}
    depth_cache: dict[str, int] = {}

    def depth(did: str, trail=()) -> int:
        if did in depth_cache:
            return depth_cache[did]
        if did in trail:
            return 1
        d = by_id.get(did)
        if d is None or not d.relations:
            depth_cache[did] = 1
            return 1
        value = 1 + max(depth(r.object_id, trail + (did,)) for r in d.relations)
        depth_cache[did] = value
        return value

    return {d.id: depth(d.id) for d in descriptors}


def _expand_chunks(chunks: list, relation_targets_by_name: bool) -> list:
    """Expand counts into distinct descriptors and resolve relation targets."""
    # assign ids, expanding counts (capped)
    name_totals: dict[str, int] = {}
    for c in chunks:
        n = min(c.count, MAX_COUNT_EXPANSION)
        name_totals[c.name] = name_totals.get(c.name, 0) + (n if c.count <= MAX_COUNT_EXPANSION else 1)
    name_seen: dict[str, int] = {}
    chunk_ids: list[list[str]] = []
    descriptors_raw = []
    for c in chunks:
        ids = []
        expand = c.count if c.count <= MAX_COUNT_EXPANSION else 1
        attrs = list(c.attributes)
        if c.count > MAX_COUNT_EXPANSION:
            attrs.append(("count", str(c.count)))
        for _ in range(expand):
            seen = name_seen.get(c.name, 0) + 1
            name_seen[c.name] = seen
            uid = c.name if name_totals[c.name] == 1 else f"{c.name}#{seen}"
            ids.append(uid)
            descriptors_raw.append((uid, c, list(attrs)))
        chunk_ids.append(ids)

    # resolve relations onto the first expansion of the target chunk
    relations_by_id: dict[str, list] = {}
    freeform_by_id: dict[str, list] = {}
    for idx, c in enumerate(chunks):
        rels = []
        if relation_targets_by_name:
            for raw in getattr(c, "raw_relations", []):
                target_ids = None
                for j, other in enumerate(chunks):
                    if other.name == raw["target"] and j != idx:
                        target_ids = chunk_ids[j]
                        break
                kind = raw["kind"]
                if target_ids and kind in RELATION_KINDS:
                    rels.append((kind, target_ids[0], raw.get("margin", 0.0)))
                else:
                    for uid in chunk_ids[idx]:
                        freeform_by_id.setdefault(uid, []).append(f"{kind} {raw['target']}")
        else:
            for kind, target_idx in c.relations:
                if 0 <= target_idx < len(chunk_ids) and chunk_ids[target_idx]:
                    rels.append((kind, chunk_ids[target_idx][0], 0.0))
        for uid in chunk_ids[idx]:
            relations_by_id[uid] = rels

    out = []
    for uid, chunk, attrs in descriptors_raw:
        rels = []
        for kind, target, margin in relations_by_id.get(uid, []):
            if target != uid:
                rels.append(Relation(subject_id=uid, object_id=target, kind=kind, margin=margin))
        attrs = attrs + [("relation_freeform", f) for f in freeform_by_id.get(uid, [])]
        out.append(
            ObjectDescriptor(
                id=uid,
                name=chunk.name,
                attributes=tuple(attrs),
                relations=tuple(rels),
                priority=1,
            )
        )
    return out
