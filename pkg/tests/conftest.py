"""Shared fixtures: tiny handmade meshes and a terminal summary for the
acceptance suite."""

import numpy as np
import pytest

from meshseg.mesh_io import Mesh

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_lines():
    return ACCEPTANCE_LINES


def checker_image(size: int = 8) -> np.ndarray:
    """Red/green checkerboard, one pixel per cell."""
    image = np.zeros((size, size, 3), dtype=np.float64)
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    red = (rows + cols) % 2 == 0
    image[red] = (1.0, 0.0, 0.0)
    image[~red] = (0.0, 1.0, 0.0)
    return image


def square_pair(labels=None, texture=None) -> Mesh:
    """Two triangles tiling the unit square, flat in z.

    The shared diagonal runs from (0,0,0) to (1,1,0); both faces wind
    counterclockwise seen from +z.
    """
    vertices = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
    )
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    tex_coords = vertices[faces][:, :, :2].copy()
    if texture is None:
        texture = checker_image()
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return Mesh(
        vertices=vertices,
        faces=faces,
        tex_coords=tex_coords,
        texture=texture,
        labels=labels,
        name="square_pair",
    )


def folded_pair(angle_rad: float) -> Mesh:
    """Two triangles hinged along the y axis; the second wing is rotated
    out of the plane so the dihedral opens to ``angle_rad``.

    angle_rad == pi reproduces the flat square-pair layout.
    """
    # wing tips start at +x and -x; rotate the -x wing about the y axis
    spread = np.pi - angle_rad
    tip = np.array([-np.cos(spread), 0.5, np.sin(spread)])
    vertices = np.array(
        [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.5, 0.0], tip]
    )
    faces = np.array([[0, 1, 2], [0, 3, 1]], dtype=np.int64)
    tex_coords = np.zeros((2, 3, 2))
    tex_coords[:, 1, 0] = 1.0
    tex_coords[:, 2, 1] = 1.0
    return Mesh(
        vertices=vertices,
        faces=faces,
        tex_coords=tex_coords,
        texture=checker_image(4),
        name="folded_pair",
    )


@pytest.fixture
def unit_square_mesh():
    return square_pair(labels=[0, 1])
