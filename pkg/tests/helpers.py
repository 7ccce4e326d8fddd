"""Shared test utilities: random layout generation and independent oracles."""

from __future__ import annotations

import random

import numpy as np

from scenedraw.geometry import BBox, LayoutSet, PlacedObject


def random_box(rng: random.Random, min_side: float = 0.01) -> BBox:
    while True:
        x0, x1 = sorted(rng.uniform(0.0, 1.0) for _ in range(2))
        y0, y1 = sorted(rng.uniform(0.0, 1.0) for _ in range(2))
        if x1 - x0 >= min_side and y1 - y0 >= min_side:
            return BBox(x0, y0, x1, y1)


def random_layout(rng: random.Random, n: int) -> LayoutSet:
    placed = tuple(
        PlacedObject(descriptor_id=f"obj{i}", bbox=random_box(rng), iteration=1, z_order=i)
        for i in range(n)
    )
    return LayoutSet(placed=placed)


def raster_pixel_counts(a: BBox, b: BBox, n: int):
    """Grid-cell counts for a, b, and their intersection at an n x n raster.

    A cell counts as covered when its center lies inside the box. Covered
    cells of an axis-aligned box factor into independent x and y runs, so
    the 2-D counts are products of 1-D boolean vectors.
    """
    centers = (np.arange(n) + 0.5) / n
    ax = (centers >= a.x_min) & (centers < a.x_max)
    ay = (centers >= a.y_min) & (centers < a.y_max)
    bx = (centers >= b.x_min) & (centers < b.x_max)
    by = (centers >= b.y_min) & (centers < b.y_max)
    count_a = int(ax.sum()) * int(ay.sum())
    count_b = int(bx.sum()) * int(by.sum())
    count_inter = int((ax & bx).sum()) * int((ay & by).sum())
    return count_a, count_b, count_inter


def raster_iou(a: BBox, b: BBox, n: int = 512) -> float:
    ca, cb, ci = raster_pixel_counts(a, b, n)
    union = ca + cb - ci
    if union == 0:
        return 0.0
    return ci / union


def raster_area(b: BBox, n: int = 1000) -> float:
    ca, _, _ = raster_pixel_counts(b, b, n)
    return ca / float(n * n)
