"""Multi-agent compositional image generation.

Four collaborating agents over an evolving canvas: an interpreter that
decomposes prompts into prioritized object groups, a planner that proposes
bounding-box layouts group by group, a deterministic checker that validates
and repairs them, and a painter that renders incrementally. Everything runs
offline through rule-based fallbacks, fixtures, and a mock rasterizer.
"""

__version__ = "0.1.0"

from .geometry import BBox, LayoutSet, ObjectDescriptor, PlacedObject, Prompt, Relation
from .interpreter import Interpreter, PriorityGroup, ScenePlan
from .orchestrator import RunConfig, Transcript, generate, replay

__all__ = [
    "BBox",
    "Interpreter",
    "LayoutSet",
    "ObjectDescriptor",
    "PlacedObject",
    "PriorityGroup",
    "Prompt",
    "Relation",
    "RunConfig",
    "ScenePlan",
    "Transcript",
    "generate",
    "replay",
]
