"""Layout-level compositional metrics and agent-call statistics.

Scores are proxies computed on final layouts, not rendered pixels:
object presence, counting, relation satisfaction, and attribute binding
through enriched captions. Aggregation also reports per-agent mean call
counts next to published reference averages for context.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import LayoutSet, relation_satisfied
from .interpreter import ScenePlan
from .orchestrator import AGENTS, Transcript

METRICS = ("object_presence", "counting", "position", "attribute_binding")

# published reference averages for per-agent calls and objects per prompt
REFERENCE_CALL_MEANS = {
    "interpreter": 1.00,
    "planner": 1.52,
    "checker": 1.62,
    "painter": 1.95,
}
REFERENCE_MEAN_OBJECTS = 2.79


@dataclass
class CorpusStats:
    prompt_count: int = 0
    mean_calls: dict = field(default_factory=lambda: {a: 0.0 for a in AGENTS})
    mean_objects: float = 0.0
    metric_means: dict = field(default_factory=lambda: {m: 0.0 for m in METRICS})

    def to_json(self) -> dict:
        return {
            "prompt_count": self.prompt_count,
            "mean_calls": dict(self.mean_calls),
            "mean_objects": self.mean_objects,
            "metric_means": dict(self.metric_means),
            "reference_mean_calls": dict(REFERENCE_CALL_MEANS),
            "reference_mean_objects": REFERENCE_MEAN_OBJECTS,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["measure", "value", "reference"])
        for agent in AGENTS:
            writer.writerow([f"mean_calls_{agent}", f"{self.mean_calls[agent]:.4f}", REFERENCE_CALL_MEANS[agent]])
        writer.writerow(["mean_objects", f"{self.mean_objects:.4f}", REFERENCE_MEAN_OBJECTS])
        for m in METRICS:
            writer.writerow([f"metric_{m}", f"{self.metric_means[m]:.4f}", ""])
        writer.writerow(["prompt_count", self.prompt_count, ""])
        return buf.getvalue()


def score_layout(plan: ScenePlan, final: LayoutSet) -> dict:
    """Per-metric scores in [0, 1] for one layout-aware plan."""
    if plan.mode != "layout-aware":
        raise ValueError("score_layout requires a layout-aware plan")
    descriptors = plan.descriptors()
    placed_ids = {p.descriptor_id for p in final.placed}

    placed = [d for d in descriptors if d.id in placed_ids]
    object_presence = len(placed) / len(descriptors) if descriptors else 0.0

    requested: dict[str, int] = {}
    got: dict[str, int] = {}
    for d in descriptors:
        requested[d.name] = requested.get(d.name, 0) + 1
        if d.id in placed_ids:
            got[d.name] = got.get(d.name, 0) + 1
    counting = 1.0 if all(got.get(name, 0) == n for name, n in requested.items()) else 0.0

    relations = plan.relations()
    checkable = [r for r in relations if r.subject_id in placed_ids and r.object_id in placed_ids]
    if relations:
        satisfied = sum(1 for r in checkable if relation_satisfied(r, final))
        position = satisfied / len(relations)
    else:
        position = 1.0

    bound = 0
    for d in descriptors:
        values = [v for k, v in d.attributes if k in ("color", "modifier")]
        if all(v in d.enriched_caption for v in values):
            bound += 1
    attribute_binding = bound / len(descriptors) if descriptors else 0.0

    return {
        "object_presence": object_presence,
        "counting": counting,
        "position": position,
        "attribute_binding": attribute_binding,
    }


def score_transcript(t: Transcript) -> dict:
    """Metric scores for one transcript; failures score zero."""
    if t.status != "ok" or t.plan is None:
        return {m: 0.0 for m in METRICS}
    plan = ScenePlan.from_json(t.plan)
    if plan.mode == "layout-free":
        # nothing to misplace on the direct path
        return {m: 1.0 for m in METRICS}
    final = LayoutSet.from_json(t.final_layout or {"placed": []})
    return score_layout(plan, final)


def aggregate(transcripts: list) -> CorpusStats:
    if not transcripts:
        raise ValueError("need at least one transcript")
    stats = CorpusStats(prompt_count=len(transcripts))
    for agent in AGENTS:
        stats.mean_calls[agent] = sum(t.counters[agent] for t in transcripts) / len(transcripts)
    stats.mean_objects = sum(t.object_count for t in transcripts) / len(transcripts)
    for m in METRICS:
        stats.metric_means[m] = sum(score_transcript(t)[m] for t in transcripts) / len(transcripts)
    return stats


def load_corpus(directory) -> list:
    paths = sorted(Path(directory).glob("*.jsonl"))
    return [Transcript.load(p) for p in paths]
