"""Per-face texture sampling: rasterize each face's UV triangle onto the
texture image and collect the covered pixel values.

Pixel (row r, col c) of an H-by-W image has its center at
``uv = ((c + 0.5) / W, (r + 0.5) / H)``. A pixel belongs to a face when its
center lies inside the face's UV triangle; centers exactly on an edge follow
the top-left fill rule, so two faces sharing a seam split the boundary pixels
between them without overlap. Faces whose triangle covers no pixel center
(degenerate or tiny) fall back to the single pixel containing the UV
centroid, so every face contributes at least one sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh_io import Mesh

CHANNELS = 3


@dataclass
class TexturePatch:
    """A fixed-length pixel sequence for one face.

    Valid rows come first; the rest are zero with a false mask. ``count`` is
    the number of valid rows and is always at least one.
    """

    pixels: np.ndarray  # (P, 3) float64 in [0, 1]
    mask: np.ndarray    # (P,) bool
    count: int


def wrap_unit(uv: np.ndarray) -> np.ndarray:
    """Wrap coordinates outside [0, 1] by their fractional part; values
    already inside (including exactly 1.0) pass through unchanged."""
    uv = np.asarray(uv, dtype=np.float64)
    out = uv.copy()
    outside = (uv < 0.0) | (uv > 1.0)
    out[outside] = uv[outside] - np.floor(uv[outside])
    return out


def _edge_is_top_left(a: np.ndarray, b: np.ndarray) -> bool:
    # y grows downward; interiors are kept on the positive side of each edge
    if a[1] == b[1]:
        return b[0] > a[0]  # horizontal edge along the triangle's top
    return b[1] < a[1]      # edge running upward bounds the triangle's left


def covered_pixels(uv_triangle: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of the pixels whose centers the UV triangle covers,
    enumerated in row-major image order. May be empty."""
    pts = wrap_unit(np.asarray(uv_triangle, dtype=np.float64)) * np.array(
        [width, height], dtype=np.float64
    )
    e1 = pts[1] - pts[0]
    e2 = pts[2] - pts[0]
    area2 = float(e1[0] * e2[1] - e1[1] * e2[0])
    if area2 == 0.0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if area2 < 0.0:
        pts = pts[::-1]

    lo = np.floor(pts.min(axis=0) - 0.5).astype(int)
    hi = np.ceil(pts.max(axis=0) - 0.5).astype(int)
    c0, c1 = max(0, lo[0]), min(width - 1, hi[0])
    r0, r1 = max(0, lo[1]), min(height - 1, hi[1])
    if c1 < c0 or r1 < r0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)

    rows, cols = np.meshgrid(
        np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij"
    )
    px = cols + 0.5
    py = rows + 0.5
    inside = np.ones(px.shape, dtype=bool)
    for i in range(3):
        a, b = pts[i], pts[(i + 1) % 3]
        value = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
        if _edge_is_top_left(a, b):
            inside &= value >= 0.0
        else:
            inside &= value > 0.0
    hit_rows, hit_cols = np.nonzero(inside)  # row-major because rows vary first
    return rows[hit_rows, hit_cols].astype(np.int64), cols[hit_rows, hit_cols].astype(np.int64)


def _centroid_pixel(uv_triangle: np.ndarray, height: int, width: int) -> tuple[int, int]:
    pts = wrap_unit(np.asarray(uv_triangle, dtype=np.float64)) * np.array(
        [width, height], dtype=np.float64
    )
    cx, cy = pts.mean(axis=0)
    col = int(np.clip(np.floor(cx), 0, width - 1))
    row = int(np.clip(np.floor(cy), 0, height - 1))
    return row, col


def rasterize_face_pixels(uv_triangle: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Pixel values covered by one face's UV triangle, in raster order.

    Always returns at least one row: triangles that cover no pixel center
    fall back to the pixel containing the UV centroid.
    """
    if image is None:
        raise ValueError("mesh has no texture image")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != CHANNELS:
        raise ValueError(f"texture must be (H, W, {CHANNELS}), got {image.shape}")
    height, width = image.shape[:2]
    rows, cols = covered_pixels(uv_triangle, height, width)
    if len(rows) == 0:
        row, col = _centroid_pixel(uv_triangle, height, width)
        return image[row, col][None, :].copy()
    return image[rows, cols]


def fit_to_length(pixels: np.ndarray, length: int) -> TexturePatch:
    """Truncate to the first ``length`` rows or zero-pad up to it."""
    if length < 1:
        raise ValueError(f"patch length must be >= 1, got {length}")
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != CHANNELS:
        raise ValueError(f"pixels must be (n, {CHANNELS}), got {pixels.shape}")
    if len(pixels) == 0:
        raise ValueError("cannot fit an empty pixel list")
    count = min(len(pixels), length)
    out = np.zeros((length, CHANNELS), dtype=np.float64)
    out[:count] = pixels[:count]
    mask = np.zeros(length, dtype=bool)
    mask[:count] = True
    return TexturePatch(pixels=out, mask=mask, count=count)


def face_patches(mesh: Mesh, length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked patches for every face of ``mesh``.

    Returns (pixels (F, P, 3), mask (F, P), counts (F,)).
    """
    if mesh.texture is None:
        raise ValueError("mesh has no texture image")
    face_count = mesh.face_count
    pixels = np.zeros((face_count, length, CHANNELS), dtype=np.float64)
    mask = np.zeros((face_count, length), dtype=bool)
    counts = np.zeros(face_count, dtype=np.int64)
    for i in range(face_count):
        patch = fit_to_length(rasterize_face_pixels(mesh.tex_coords[i], mesh.texture), length)
        pixels[i] = patch.pixels
        mask[i] = patch.mask
        counts[i] = patch.count
    return pixels, mask, counts


def save_patches(path: str | Path, pixels: np.ndarray, mask: np.ndarray, counts: np.ndarray) -> None:
    np.savez_compressed(path, pixels=pixels, mask=mask, counts=counts)


def load_patches(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with np.load(path) as data:
        return data["pixels"], data["mask"], data["counts"]
