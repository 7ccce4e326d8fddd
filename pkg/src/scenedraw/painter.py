"""Canvas rendering backends.

Layout-free prompts go through a text-to-image backend, layout-aware
iterations through a layout-to-image backend. Both have HTTP
implementations plus a deterministic mock rasterizer so the whole
pipeline runs offline. The mock canvas is a pure function of
(layout_so_far, background, seed, resolution).
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from PIL import Image

from .geometry import BBox, LayoutSet, PlacedObject, Prompt

DEFAULT_RESOLUTION = 1024


class BackendUnavailable(Exception):
    """The configured paint backend could not produce an image."""


class LayoutMismatch(Exception):
    """An object id is already present on the canvas."""


@dataclass(frozen=True)
class CanvasState:
    image_png: Optional[bytes] = None
    layout_so_far: LayoutSet = field(default_factory=LayoutSet)
    iteration: int = 0
    background: str = ""

    def __post_init__(self):
        if (self.iteration == 0) != (self.image_png is None):
            raise ValueError("iteration 0 iff image absent")


def stable_color(name: str, attributes=()) -> tuple:
    """24-bit color from the descriptor content hash; stable across platforms."""
    payload = json.dumps({"name": name, "attributes": [list(a) for a in attributes]}, sort_keys=True)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return (digest[0], digest[1], digest[2])


def background_color(background: str, seed: int) -> tuple:
    digest = hashlib.sha256(f"{background}|{seed}".encode("utf-8")).digest()
    # bias toward light tones so object rectangles stand out
    return (128 + digest[0] // 2, 128 + digest[1] // 2, 128 + digest[2] // 2)


def box_to_pixels(b: BBox, width: int, height: int) -> tuple:
    """Box to pixel bounds: min edges round down, max edges round up."""
    x0 = math.floor(b.x_min * width)
    y0 = math.floor(b.y_min * height)
    x1 = math.ceil(b.x_max * width)
    y1 = math.ceil(b.y_max * height)
    return x0, y0, min(x1, width), min(y1, height)


def render_mock(
    layout: LayoutSet,
    captions: dict,
    colors: dict,
    background: str,
    seed: int,
    resolution: int = DEFAULT_RESOLUTION,
) -> bytes:
    """Rasterize the full cumulative layout in ascending z order."""
    img = Image.new("RGB", (resolution, resolution), background_color(background, seed))
    for placed in sorted(layout.placed, key=lambda p: p.z_order):
        color = colors.get(placed.descriptor_id, stable_color(placed.descriptor_id))
        x0, y0, x1, y1 = box_to_pixels(placed.bbox, resolution, resolution)
        if x1 > x0 and y1 > y0:
            img.paste(color, (x0, y0, x1, y1))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


@dataclass
class MockBackend:
    kind: str = "mock"
    seed: int = 0
    resolution: int = DEFAULT_RESOLUTION

    def paint_text(self, prompt_text: str) -> bytes:
        # solid background keyed by the prompt hash and seed
        color = background_color(prompt_text, self.seed)
        img = Image.new("RGB", (self.resolution, self.resolution), color)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    def paint_layout(
        self,
        background: str,
        layout: LayoutSet,
        captions: dict,
        colors: dict,
        prior_image: Optional[bytes],
    ) -> bytes:
        return render_mock(layout, captions, colors, background, self.seed, self.resolution)


@dataclass
class HttpBackend:
    """JSON-over-HTTP painter; one POST per render."""

    kind: str  # "t2i-http" | "l2i-http"
    endpoint: str = ""
    seed: int = 0
    resolution: int = DEFAULT_RESOLUTION
    timeout: float = 120.0

    def paint_text(self, prompt_text: str) -> bytes:
        return self._post({"prompt": prompt_text, "seed": self.seed, "resolution": self.resolution})

    def paint_layout(self, background, layout, captions, colors, prior_image) -> bytes:
        regions = [
            {
                "bbox": [p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max],
                "caption": captions.get(p.descriptor_id, p.descriptor_id),
                "z_order": p.z_order,
            }
            for p in sorted(layout.placed, key=lambda p: p.z_order)
        ]
        body = {
            "background": background,
            "regions": regions,
            "prior_image_b64": base64.b64encode(prior_image).decode() if prior_image else None,
            "seed": self.seed,
            "resolution": self.resolution,
        }
        return self._post(body)

    def _post(self, body: dict) -> bytes:
        import httpx

        if not self.endpoint:
            raise BackendUnavailable("no endpoint configured")
        try:
            resp = httpx.post(self.endpoint, json=body, timeout=self.timeout)
            resp.raise_for_status()
        except Exception as exc:
            raise BackendUnavailable(str(exc)) from exc
        return base64.b64decode(resp.json()["image_b64"])


def paint_free(prompt: Prompt, backend) -> CanvasState:
    image = backend.paint_text(prompt.text)
    return CanvasState(image_png=image, layout_so_far=LayoutSet(), iteration=1, background=prompt.text)


def paint_step(
    canvas: CanvasState,
    new_objects,
    captions: dict,
    backend,
    colors: Optional[dict] = None,
) -> CanvasState:
    """Integrate newly confirmed objects and re-render; input canvas untouched."""
    new_objects = list(new_objects)
    for obj in new_objects:
        if canvas.layout_so_far.get(obj.descriptor_id) is not None:
            raise LayoutMismatch(obj.descriptor_id)
        if obj.iteration != canvas.iteration + 1:
            raise ValueError(
                f"object {obj.descriptor_id} iteration {obj.iteration}, expected {canvas.iteration + 1}"
            )
    merged = canvas.layout_so_far.with_objects(new_objects)
    image = backend.paint_layout(
        canvas.background, merged, captions, colors or {}, canvas.image_png
    )
    return CanvasState(
        image_png=image,
        layout_so_far=merged,
        iteration=canvas.iteration + 1,
        background=canvas.background,
    )


def advance(canvas: CanvasState, layout: LayoutSet, captions: dict, backend, colors=None) -> CanvasState:
    """One painter step over a checker-refined cumulative layout.

    Unlike paint_step this accepts revisions of already-integrated boxes,
    which the checker's second stage is allowed to make.
    """
    image = backend.paint_layout(canvas.background, layout, captions, colors or {}, canvas.image_png)
    return CanvasState(
        image_png=image,
        layout_so_far=layout,
        iteration=canvas.iteration + 1,
        background=canvas.background,
    )
