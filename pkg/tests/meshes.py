"""Shared mesh constructors for the test suite."""

import numpy as np

from viewsynth.modelaug import Mesh

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [3, 0, 4], [3, 4, 7],  # -x
    ],
    dtype=np.int64,
)


def box_mesh(lo, hi):
    """Axis-aligned box with outward-facing triangles."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    vertices = np.array(
        [
            [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
            [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
        ]
    )
    return Mesh(vertices, _BOX_FACES.copy())


def merge_meshes(*meshes):
    """Concatenate meshes (vertices deduplication not needed for tests)."""
    vertices = []
    faces = []
    offset = 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        offset += len(mesh.vertices)
    return Mesh(np.vstack(vertices), np.vstack(faces))


def unit_cube():
    return box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def symmetric_mesh():
    """Bilaterally symmetric two-box shape, mirror plane x = 0."""
    return merge_meshes(
        box_mesh((-0.5, -0.3, -0.2), (0.5, 0.3, 0.2)),
        box_mesh((-0.2, -0.1, 0.2), (0.2, 0.5, 0.5)),
    )


def asymmetric_mesh():
    """L-shaped solid whose silhouette differs per azimuth octant."""
    return merge_meshes(
        box_mesh((-0.5, -0.4, -0.25), (0.5, 0.4, 0.0)),
        box_mesh((0.1, -0.4, 0.0), (0.5, 0.0, 0.45)),
        box_mesh((-0.5, 0.15, 0.0), (-0.2, 0.4, 0.2)),
    )
