"""Response JSON schemas for agent model calls.

These schemas are the contract for fixture authors: a recorded response is
only considered parsed when it validates against the schema named by its
request's response_schema_id.
"""

from __future__ import annotations

import jsonschema

_BBOX_ARRAY = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 4,
    "maxItems": 4,
}

MODE_DECISION = {
    "type": "object",
    "properties": {
        "layout_aware": {"type": "boolean"},
        "object_count": {"type": "integer", "minimum": 0},
    },
    "required": ["layout_aware", "object_count"],
}

DECOMPOSITION = {
    "type": "object",
    "properties": {
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "count": {"type": "integer", "minimum": 1},
                    "attributes": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "items": {"type": "string"},
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                    "relations": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "target": {"type": "string"},
                                "kind": {"type": "string"},
                                "margin": {"type": "number"},
                            },
                            "required": ["target", "kind"],
                        },
                    },
                },
                "required": ["name"],
            },
        }
    },
    "required": ["objects"],
}

RANKING = {
    "type": "object",
    "properties": {
        "priorities": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 1},
        }
    },
    "required": ["priorities"],
}

ENRICHMENT = {
    "type": "object",
    "properties": {
        "captions": {
            "type": "object",
            "additionalProperties": {"type": "string"},
        },
        "background": {"type": "string"},
    },
    "required": ["captions", "background"],
}

LAYOUT_PROPOSAL = {
    "type": "object",
    "properties": {
        "placements": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "bbox": _BBOX_ARRAY,
                    "z_order": {"type": "integer"},
                },
                "required": ["id", "bbox"],
            },
        }
    },
    "required": ["placements"],
}

CHECKER_ADVISORY = {
    "type": "object",
    "properties": {
        "issues": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "descriptor_id": {"type": "string"},
                    "note": {"type": "string"},
                },
                "required": ["descriptor_id", "note"],
            },
        }
    },
    "required": ["issues"],
}

REGISTRY = {
    "mode-decision": MODE_DECISION,
    "decomposition": DECOMPOSITION,
    "ranking": RANKING,
    "enrichment": ENRICHMENT,
    "layout-proposal": LAYOUT_PROPOSAL,
    "checker-advisory": CHECKER_ADVISORY,
}


def validate(schema_id: str, value) -> None:
    """Raise jsonschema.ValidationError when value does not match the schema."""
    jsonschema.validate(value, REGISTRY[schema_id])
