"""Small procedurally generated textured tiles for tests and demos.

A tile is a unit-square grid of cells, each split into four triangles around
a center vertex. Every cell gets a class: either its texture square is
painted in the class color (texture scenes, flat geometry) or its center
vertex is lifted so the class shows up in the shape (geometry scenes,
uniform gray texture). Texture coordinates are the flat xy layout, so each
face samples exactly its own cell's pixels.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .mesh_io import Mesh, write_labels, write_obj, write_texture_png

_CLASS_COLORS = [
    (200, 30, 30),
    (30, 30, 200),
    (30, 180, 30),
    (220, 220, 40),
    (160, 40, 200),
    (40, 200, 200),
]


def make_scene(
    kind: str = "texture",
    cells_x: int = 11,
    cells_y: int = 11,
    image_size: int = 64,
    num_classes: int = 2,
    amplitude: float = 0.25,
    seed: int = 0,
    name: str = "",
) -> Mesh:
    """Build one labeled, textured tile.

    ``kind`` is ``"texture"`` (classes differ only in pixel color) or
    ``"geometry"`` (classes differ only in shape; the texture is uniform).
    """
    if kind not in ("texture", "geometry"):
        raise ValueError(f"kind must be 'texture' or 'geometry', got {kind!r}")
    if num_classes > len(_CLASS_COLORS):
        raise ValueError(f"at most {len(_CLASS_COLORS)} classes supported")
    rng = np.random.default_rng(seed)
    cell_class = rng.integers(0, num_classes, size=(cells_y, cells_x))

    corner_index = lambda i, j: i * (cells_x + 1) + j
    corners = np.array(
        [
            [j / cells_x, i / cells_y, 0.0]
            for i in range(cells_y + 1)
            for j in range(cells_x + 1)
        ],
        dtype=np.float64,
    )
    centers = []
    center_index = {}
    for i in range(cells_y):
        for j in range(cells_x):
            center_index[(i, j)] = len(corners) + len(centers)
            z = 0.0
            if kind == "geometry" and num_classes > 1:
                z = amplitude * cell_class[i, j] / (num_classes - 1)
            centers.append([(j + 0.5) / cells_x, (i + 0.5) / cells_y, z])
    vertices = np.vstack([corners, np.array(centers, dtype=np.float64)])

    faces, labels = [], []
    for i in range(cells_y):
        for j in range(cells_x):
            c = center_index[(i, j)]
            v00 = corner_index(i, j)
            v01 = corner_index(i, j + 1)
            v10 = corner_index(i + 1, j)
            v11 = corner_index(i + 1, j + 1)
            for a, b in ((v00, v01), (v01, v11), (v11, v10), (v10, v00)):
                faces.append([a, b, c])
                labels.append(cell_class[i, j])
    faces = np.asarray(faces, dtype=np.int64)
    # flat xy layout doubles as the texture atlas
    tex_coords = vertices[faces][:, :, :2].copy()

    image = np.zeros((image_size, image_size, 3), dtype=np.float64)
    if kind == "texture":
        for r in range(image_size):
            for col in range(image_size):
                i = min(int((r + 0.5) / image_size * cells_y), cells_y - 1)
                j = min(int((col + 0.5) / image_size * cells_x), cells_x - 1)
                image[r, col] = np.array(_CLASS_COLORS[cell_class[i, j]]) / 255.0
    else:
        image[:] = 0.5

    return Mesh(
        vertices=vertices,
        faces=faces,
        tex_coords=tex_coords,
        texture=image,
        labels=np.asarray(labels, dtype=np.int64),
        name=name or f"{kind}_scene_{seed}",
    )


def write_tile(tile_dir: str | Path, mesh: Mesh) -> Path:
    """Write a tile directory: mesh.obj, texture.png, labels.txt."""
    tile_dir = Path(tile_dir)
    tile_dir.mkdir(parents=True, exist_ok=True)
    write_obj(tile_dir / "mesh.obj", mesh)
    write_texture_png(tile_dir / "texture.png", mesh.texture)
    if mesh.labels is not None:
        write_labels(tile_dir / "labels.txt", mesh.labels)
    return tile_dir


_DEMO_CONFIG = """\
# demo dataset configuration
train_tiles = {root}/train_0,{root}/train_1
val_tiles = {root}/val_0
test_tiles = {root}/test_0
output_dir = {root}/runs

num_classes = 2
branch_dim = 8
embed_dim = 32
num_blocks = 2
num_heads = 2
pixels_per_face = 16
num_clusters = 8
modality = both
global_mode = self_attention
dropout = 0.05

epochs = 60
seed = 0
lr_max = 0.003
lr_min = 0.0001
eval_every = 5
augment = true
rotate_max_deg = 10
scale_min = 0.9
scale_max = 1.1
noise_sigma = 0.002
"""


def write_demo_dataset(root: str | Path, kind: str = "texture") -> Path:
    """Generate a tiny train/val/test dataset plus a ready-to-run config."""
    root = Path(root)
    for split, seeds in (("train", (0, 1)), ("val", (2,)), ("test", (3,))):
        for idx, seed in enumerate(seeds):
            mesh = make_scene(kind=kind, seed=seed, name=f"{split}_{idx}")
            write_tile(root / f"{split}_{idx}", mesh)
    config_path = root / "config.cfg"
    config_path.write_text(_DEMO_CONFIG.format(root=root), encoding="utf-8")
    return config_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="generate a demo tile dataset")
    parser.add_argument("out_dir", help="directory to create the dataset in")
    parser.add_argument("--kind", choices=("texture", "geometry"), default="texture")
    args = parser.parse_args(argv)
    config_path = write_demo_dataset(args.out_dir, kind=args.kind)
    print(f"wrote demo dataset, config at {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
