"""Reading and writing textured meshes, labels, palettes, and predictions.

Meshes come in as Wavefront-style text (``v``/``vt``/``f`` records, faces as
triangles with per-corner texture coordinate references) plus an 8-bit RGB
texture image. Labels are newline-separated integers, one per face, with -1
marking unlabeled faces. Colored prediction meshes go out as ASCII PLY with
vertices duplicated per face so each face shows a flat class color.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

UNLABELED = -1


@dataclass
class Mesh:
    """A triangle mesh with per-corner texture coordinates.

    Treated as immutable after construction; transforms return new instances
    via ``dataclasses.replace``. Non-manifold connectivity is allowed: any
    number of faces may share an edge or vertex.

    Attributes:
        vertices: (V, 3) float64 positions.
        faces: (F, 3) int64 vertex indices.
        tex_coords: (F, 3, 2) float64 per-corner UV coordinates.
        texture: (H, W, 3) float64 image with values in [0, 1], or None.
        labels: (F,) int64 per-face class labels with -1 for unlabeled, or None.
        name: short identifier used in reports and cache paths.
    """

    vertices: np.ndarray
    faces: np.ndarray
    tex_coords: np.ndarray
    texture: np.ndarray | None = None
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.tex_coords = np.asarray(self.tex_coords, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.tex_coords.shape != (len(self.faces), 3, 2):
            raise ValueError(
                f"tex_coords must be (F, 3, 2), got {self.tex_coords.shape}"
            )
        if len(self.faces) and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ValueError("face vertex index out of range")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.faces),):
                raise ValueError("labels must have one entry per face")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def replace(self, **kwargs) -> "Mesh":
        return dataclasses.replace(self, **kwargs)


def _parse_index(token: str, count: int, line_no: int, kind: str) -> int:
    try:
        raw = int(token)
    except ValueError as exc:
        raise ValueError(f"line {line_no}: bad {kind} index {token!r}") from exc
    if raw == 0:
        raise ValueError(f"line {line_no}: {kind} indices are 1-based, got 0")
    idx = raw - 1 if raw > 0 else count + raw
    if not 0 <= idx < count:
        raise ValueError(f"line {line_no}: {kind} index {raw} out of range")
    return idx


def load_textured_mesh(mesh_path: str | Path, texture_path: str | Path) -> Mesh:
    """Parse a textured triangle mesh and its RGB texture image.

    Faces must be triangles and every corner must reference a texture
    coordinate (``f v/vt ...`` or ``f v/vt/vn ...``). Unknown record types
    are ignored.
    """
    mesh_path = Path(mesh_path)
    positions: list[list[float]] = []
    uvs: list[list[float]] = []
    face_vertices: list[list[int]] = []
    face_uvs: list[list[int]] = []
    with open(mesh_path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"line {line_no}: vertex needs 3 coordinates")
                positions.append([float(p) for p in parts[1:4]])
            elif tag == "vt":
                if len(parts) < 3:
                    raise ValueError(f"line {line_no}: texture coordinate needs u and v")
                uvs.append([float(p) for p in parts[1:3]])
            elif tag == "f":
                corners = parts[1:]
                if len(corners) != 3:
                    raise ValueError(
                        f"line {line_no}: only triangular faces are supported, "
                        f"got {len(corners)} corners"
                    )
                vs, ts = [], []
                for corner in corners:
                    fields = corner.split("/")
                    if len(fields) < 2 or not fields[1]:
                        raise ValueError(
                            f"line {line_no}: face corner {corner!r} has no "
                            "texture coordinate reference"
                        )
                    vs.append(_parse_index(fields[0], len(positions), line_no, "vertex"))
                    ts.append(_parse_index(fields[1], len(uvs), line_no, "texture"))
                face_vertices.append(vs)
                face_uvs.append(ts)
            # other record types (vn, o, g, s, usemtl, mtllib) carry nothing we need
    if not positions:
        raise ValueError(f"{mesh_path}: no vertices found")
    if not face_vertices:
        raise ValueError(f"{mesh_path}: no faces found")
    uv_array = np.asarray(uvs, dtype=np.float64)
    tex_coords = uv_array[np.asarray(face_uvs, dtype=np.int64)]
    return Mesh(
        vertices=np.asarray(positions, dtype=np.float64),
        faces=np.asarray(face_vertices, dtype=np.int64),
        tex_coords=tex_coords,
        texture=load_texture_image(texture_path),
        name=mesh_path.stem,
    )


def load_texture_image(path: str | Path) -> np.ndarray:
    """Read an image file as (H, W, 3) float64 with values in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        data = np.asarray(rgb, dtype=np.float64)
    return data / 255.0


def write_obj(path: str | Path, mesh: Mesh) -> None:
    """Write the mesh as v/vt/f records (one vt per face corner)."""
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}")
    for face_uv in mesh.tex_coords:
        for u, v in face_uv:
            lines.append(f"vt {u:.17g} {v:.17g}")
    for i, face in enumerate(mesh.faces):
        t0, t1, t2 = 3 * i + 1, 3 * i + 2, 3 * i + 3
        lines.append(f"f {face[0] + 1}/{t0} {face[1] + 1}/{t1} {face[2] + 1}/{t2}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_texture_png(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W, 3) float [0, 1] or uint8 array as a PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_labels(
    path: str | Path,
    face_count: int,
    num_classes: int | None = None,
) -> np.ndarray:
    """Read one integer label per line; -1 marks an unlabeled face.

    The line count must equal ``face_count``. When ``num_classes`` is given,
    labels at or above it are rejected.
    """
    values = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                value = int(stripped)
            except ValueError as exc:
                raise ValueError(f"line {line_no}: not an integer label: {stripped!r}") from exc
            if value < UNLABELED:
                raise ValueError(f"line {line_no}: label {value} below {UNLABELED}")
            if num_classes is not None and value >= num_classes:
                raise ValueError(
                    f"line {line_no}: label {value} outside [0, {num_classes})"
                )
            values.append(value)
    if len(values) != face_count:
        raise ValueError(
            f"{path}: {len(values)} labels for {face_count} faces"
        )
    return np.asarray(values, dtype=np.int64)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in labels) + "\n", encoding="utf-8")


_DEFAULT_COLORS = [
    (0, 0, 255),      # blue
    (0, 100, 0),      # dark green
    (0, 200, 0),      # green
    (255, 255, 0),    # yellow
    (255, 165, 0),    # orange
    (255, 0, 0),      # red
]


@dataclass
class ClassPalette:
    """Bijective mapping from class index to an RGB display color."""

    colors: dict[int, tuple[int, int, int]]
    unlabeled: tuple[int, int, int] = (128, 128, 128)

    def __post_init__(self):
        seen = set()
        for label, color in self.colors.items():
            if label < 0:
                raise ValueError(f"palette class index {label} is negative")
            color = tuple(int(c) for c in color)
            if any(not 0 <= c <= 255 for c in color):
                raise ValueError(f"palette color {color} outside 8-bit range")
            if color in seen:
                raise ValueError(f"palette color {color} assigned to two classes")
            seen.add(color)
            self.colors[label] = color

    def color_for(self, label: int) -> tuple[int, int, int]:
        if label == UNLABELED:
            return self.unlabeled
        if label not in self.colors:
            raise ValueError(f"no palette color for class {label}")
        return self.colors[label]

    @classmethod
    def default(cls, num_classes: int) -> "ClassPalette":
        """Fixed colors for the first six classes, HSV wheel beyond."""
        import colorsys

        colors: dict[int, tuple[int, int, int]] = {}
        for i in range(num_classes):
            if i < len(_DEFAULT_COLORS):
                colors[i] = _DEFAULT_COLORS[i]
            else:
                hue = (i - len(_DEFAULT_COLORS)) / max(1, num_classes - len(_DEFAULT_COLORS))
                r, g, b = colorsys.hsv_to_rgb(0.05 + 0.9 * hue, 0.6, 0.9)
                colors[i] = (int(r * 255), int(g * 255), int(b * 255))
        return cls(colors=colors)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ClassPalette":
        """Rows of ``class_index,r,g,b``; index -1 sets the unlabeled color."""
        colors: dict[int, tuple[int, int, int]] = {}
        unlabeled = (128, 128, 128)
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for row in csv.reader(handle):
                if not row or row[0].strip().startswith("#"):
                    continue
                label = int(row[0])
                rgb = (int(row[1]), int(row[2]), int(row[3]))
                if label == UNLABELED:
                    unlabeled = rgb
                else:
                    colors[label] = rgb
        if not colors:
            raise ValueError(f"{path}: no palette rows")
        return cls(colors=colors, unlabeled=unlabeled)


def export_labeled_mesh(
    path: str | Path,
    mesh: Mesh,
    labels: np.ndarray,
    palette: ClassPalette,
) -> None:
    """Write an ASCII PLY with vertices duplicated per face and per-vertex
    colors, so every face renders with a flat class color in common viewers.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (mesh.face_count,):
        raise ValueError(
            f"{len(labels)} labels for {mesh.face_count} faces"
        )
    face_colors = [palette.color_for(int(label)) for label in labels]
    lines = [
        "ply",
        "format ascii 1.0",
        "comment per-face class labels painted as vertex colors",
        f"element vertex {3 * mesh.face_count}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {mesh.face_count}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for face, color in zip(mesh.faces, face_colors):
        r, g, b = color
        for vid in face:
            x, y, z = mesh.vertices[vid]
            lines.append(f"{x:.17g} {y:.17g} {z:.17g} {r} {g} {b}")
    for i in range(mesh.face_count):
        lines.append(f"3 {3 * i} {3 * i + 1} {3 * i + 2}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_colored_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read back the ASCII PLY layout written by ``export_labeled_mesh``.

    Returns (vertices (N, 3), faces (F, 3), colors (N, 3) uint8).
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle]
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    vertex_count = face_count = None
    body_start = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            vertex_count = int(line.split()[-1])
        elif line.startswith("element face"):
            face_count = int(line.split()[-1])
        elif line == "end_header":
            body_start = i + 1
            break
    if vertex_count is None or face_count is None or body_start is None:
        raise ValueError(f"{path}: malformed PLY header")
    vertices = np.zeros((vertex_count, 3), dtype=np.float64)
    colors = np.zeros((vertex_count, 3), dtype=np.uint8)
    for i in range(vertex_count):
        parts = lines[body_start + i].split()
        vertices[i] = [float(p) for p in parts[:3]]
        colors[i] = [int(p) for p in parts[3:6]]
    faces = np.zeros((face_count, 3), dtype=np.int64)
    for i in range(face_count):
        parts = lines[body_start + vertex_count + i].split()
        if parts[0] != "3":
            raise ValueError(f"{path}: non-triangular face in PLY body")
        faces[i] = [int(p) for p in parts[1:4]]
    return vertices, faces, colors


def write_prediction_csv(path: str | Path, scores: np.ndarray, labels: np.ndarray) -> None:
    """Write per-face rows: face_index, predicted label, then one column per
    class score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError("scores must be (F, C) with one label per row")
    num_classes = scores.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["face_index", "label"] + [f"score_{c}" for c in range(num_classes)]
        )
        for i, (label, row) in enumerate(zip(labels, scores)):
            writer.writerow([i, int(label)] + [f"{v:.17g}" for v in row])


def read_prediction_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``write_prediction_csv``: returns (labels, scores)."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    header, body = rows[0], rows[1:]
    num_classes = len(header) - 2
    labels = np.asarray([int(row[1]) for row in body], dtype=np.int64)
    scores = np.asarray(
        [[float(v) for v in row[2 : 2 + num_classes]] for row in body], dtype=np.float64
    )
    return labels, scores
