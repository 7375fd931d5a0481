"""Mesh normalization, per-face shape descriptors, and training-time jitter.

Each face yields a 16-wide descriptor: the three vertex positions (9), the
unit normal (3), the area (1), and the angles to the neighboring face across
each of the three edges (3). Angles are measured between the two half-planes
hinged on the shared edge, so a flat surface reads pi and the value does not
depend on either face's vertex winding. Borders read pi; when more than two
faces share an edge the neighbor with the lowest face index wins.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .mesh_io import Mesh

DESCRIPTOR_WIDTH = 16

# Faces whose corner cross product is this small count as zero-area.
_DEGENERATE_AREA = 1e-12


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Center vertices on their centroid and scale by the bounding-box
    diagonal. Raises for meshes whose bounding box has no extent."""
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    diagonal = float(np.linalg.norm(extent))
    if diagonal < 1e-15:
        raise ValueError("mesh bounding box has zero diagonal")
    return mesh.replace(vertices=centered / diagonal)


def face_corner_positions(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return vertices[faces]  # (F, 3, 3)


def face_cross_products(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    corners = face_corner_positions(vertices, faces)
    return np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Triangle areas, half the corner cross-product magnitude."""
    return 0.5 * np.linalg.norm(face_cross_products(vertices, faces), axis=1)


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit normals oriented by vertex order; zero vector for degenerate faces."""
    cross = face_cross_products(vertices, faces)
    norms = np.linalg.norm(cross, axis=1)
    out = np.zeros_like(cross)
    ok = norms > 2.0 * _DEGENERATE_AREA
    out[ok] = cross[ok] / norms[ok, None]
    return out


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def build_edge_map(faces: np.ndarray) -> dict[tuple[int, int], list[int]]:
    """Map each undirected edge to the ascending list of faces that use it."""
    edges: dict[tuple[int, int], list[int]] = {}
    for face_index, (v0, v1, v2) in enumerate(faces):
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            edges.setdefault(_edge_key(int(a), int(b)), []).append(face_index)
    return edges


def _hinge_angle(
    vertices: np.ndarray,
    edge: tuple[int, int],
    opposite_a: int,
    opposite_b: int,
) -> float:
    """Angle between the half-planes through ``edge`` containing the two
    opposite vertices. Flat (opposite sides) gives pi, folded flat gives 0."""
    a = vertices[edge[0]]
    direction = vertices[edge[1]] - a
    length = np.linalg.norm(direction)
    if length < 1e-15:
        return math.pi
    direction = direction / length
    u = vertices[opposite_a] - a
    u = u - (u @ direction) * direction
    w = vertices[opposite_b] - a
    w = w - (w @ direction) * direction
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu < 1e-12 or nw < 1e-12:
        return math.pi
    cos = float(np.clip((u @ w) / (nu * nw), -1.0, 1.0))
    return math.acos(cos)


def _opposite_vertex(face: np.ndarray, edge: tuple[int, int]) -> int | None:
    for vid in face:
        if int(vid) not in edge:
            return int(vid)
    return None


class DescriptorSet(NamedTuple):
    values: np.ndarray     # (F, 16) float64
    degenerate: np.ndarray  # (F,) bool, true where the face has zero area


def face_descriptors(mesh: Mesh) -> DescriptorSet:
    """Compute the 16-wide descriptor for every face of ``mesh``.

    Zero-area faces are flagged rather than rejected: they get a zero normal,
    zero area, and pi for all three angles.
    """
    vertices, faces = mesh.vertices, mesh.faces
    corners = face_corner_positions(vertices, faces)
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    cross_norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * cross_norm
    degenerate = areas <= _DEGENERATE_AREA

    normals = np.zeros_like(cross)
    ok = ~degenerate
    normals[ok] = cross[ok] / cross_norm[ok, None]
    areas = np.where(degenerate, 0.0, areas)

    edge_map = build_edge_map(faces)
    angles = np.full((len(faces), 3), math.pi, dtype=np.float64)
    for face_index, face in enumerate(faces):
        if degenerate[face_index]:
            continue
        v0, v1, v2 = (int(v) for v in face)
        for slot, (ea, eb, opp) in enumerate(((v0, v1, v2), (v1, v2, v0), (v2, v0, v1))):
            key = _edge_key(ea, eb)
            neighbor = None
            for candidate in edge_map[key]:
                if candidate != face_index:
                    neighbor = candidate
                    break  # entries are ascending, first other face wins
            if neighbor is None:
                continue  # border edge keeps pi
            opp_b = _opposite_vertex(faces[neighbor], key)
            if opp_b is None:
                continue
            angles[face_index, slot] = _hinge_angle(vertices, key, opp, opp_b)

    values = np.concatenate(
        [
            corners.reshape(len(faces), 9),
            normals,
            areas[:, None],
            angles,
        ],
        axis=1,
    )
    return DescriptorSet(values=values, degenerate=degenerate)


@dataclass
class AugmentConfig:
    """Training-time jitter: rotate, then scale, then add vertex noise."""

    enabled: bool = True
    rotate_max_deg: float = 45.0
    scale_min: float = 0.5
    scale_max: float = 2.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.rotate_max_deg < 0:
            raise ValueError("rotate_max_deg must be >= 0")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("need 0 < scale_min <= scale_max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def rotation_matrix(angles_rad: np.ndarray) -> np.ndarray:
    """Rotation composed as Rz @ Ry @ Rx from per-axis angles."""
    ax, ay, az = (float(a) for a in angles_rad)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return rz @ ry @ rx


def augment(mesh: Mesh, config: AugmentConfig, rng: np.random.Generator) -> Mesh:
    """Apply one fresh draw of rotation, uniform scale, and Gaussian vertex
    noise. Topology, texture coordinates, and labels are untouched.

    The random stream is consumed in a fixed order (three angles, one scale,
    then the noise block) so runs with the same seed coincide.
    """
    if not config.enabled:
        return mesh
    max_rad = math.radians(config.rotate_max_deg)
    angles = rng.uniform(-max_rad, max_rad, size=3)
    scale = rng.uniform(config.scale_min, config.scale_max)
    noise = rng.normal(0.0, config.noise_sigma, size=mesh.vertices.shape)
    vertices = mesh.vertices @ rotation_matrix(angles).T * scale + noise
    return mesh.replace(vertices=vertices)


def dump_descriptors_csv(path: str | Path, values: np.ndarray) -> None:
    """Write one 16-column row per face for offline inspection."""
    header = (
        [f"v{i}_{axis}" for i in range(3) for axis in "xyz"]
        + ["normal_x", "normal_y", "normal_z", "area", "angle_01", "angle_12", "angle_20"]
    )
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["face_index"] + header)
        for i, row in enumerate(np.asarray(values, dtype=np.float64)):
            writer.writerow([i] + [f"{v:.17g}" for v in row])
