"""Mesh representation, OBJ I/O, and symmetry-preserving lattice deformation.

New training meshes are generated from seed meshes by free-form
deformation: a regular grid of control points spans the mesh bounding
box, each control point gets a random Gaussian translation, and every
vertex moves by a falloff-weighted convex combination of the nearby
control translations. Control points mirrored across the x = 0 plane
receive mirrored translations, so bilaterally symmetric meshes stay
symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "ControlLattice",
    "DeformationField",
    "load_obj",
    "save_obj",
    "compute_vertex_normals",
    "build_lattice",
    "sample_deformation",
    "apply_deformation",
]

_DEGENERATE_AREA = 1e-12


@dataclass
class Mesh:
    """Triangle mesh: (n, 3) float vertices, (m, 3) int faces, optional normals."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.faces.size and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ValueError("face index out of range")

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise ValueError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def drop_degenerate_faces(self) -> "Mesh":
        """Remove faces with area below 1e-12 (load-time cleanup)."""
        if len(self.faces) == 0:
            return self
        keep = self.face_areas() > _DEGENERATE_AREA
        return Mesh(self.vertices.copy(), self.faces[keep], self.normals)


@dataclass
class ControlLattice:
    """Regular n^3 control-point grid spanning a mesh bounding box.

    symmetry_pairs mirror across the x = 0 plane by grid-index arithmetic:
    grid point (i, j, k) pairs with (n-1-i, j, k); points on the mirror
    plane pair with themselves. max_spacing is the largest distance
    between axis-adjacent grid neighbors and bounds each control point's
    influence radius.
    """

    resolution: int
    points: np.ndarray
    symmetry_pairs: list[tuple[int, int]]
    max_spacing: float


@dataclass
class DeformationField:
    """Per-control-point translation vectors, mirror-consistent in pairs."""

    offsets: np.ndarray


def _parse_face_vertex(token: str) -> int:
    # OBJ faces may be "v", "v/vt", "v//vn", or "v/vt/vn"; indices 1-based
    index = int(token.split("/")[0])
    if index < 0:
        raise ValueError("negative OBJ face indices are not supported")
    return index - 1


def load_obj(path: str | Path) -> Mesh:
    """Read a Wavefront OBJ mesh (triangulating larger faces as fans)."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            corner = [_parse_face_vertex(tok) for tok in parts[1:]]
            for second, third in zip(corner[1:], corner[2:]):
                faces.append([corner[0], second, third])
    if not vertices:
        raise ValueError(f"{path}: no vertices found")
    mesh = Mesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
    return mesh.drop_degenerate_faces()


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals (unit length; zero stays zero)."""
    normals = np.zeros_like(mesh.vertices)
    a, b, c = (mesh.vertices[mesh.faces[:, k]] for k in range(3))
    face_normals = np.cross(b - a, c - a)  # length = 2 * area
    for k in range(3):
        np.add.at(normals, mesh.faces[:, k], face_normals)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    return np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write vertices, recomputed normals, and faces as Wavefront OBJ."""
    normals = compute_vertex_normals(mesh)
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for n in normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"f {f[0]+1}//{f[0]+1} {f[1]+1}//{f[1]+1} {f[2]+1}//{f[2]+1}")
    Path(path).write_text("\n".join(lines) + "\n")


def build_lattice(mesh: Mesh, resolution: int = 4) -> ControlLattice:
    """Place a regular resolution^3 control grid over the mesh bounding box."""
    if resolution < 2:
        raise ValueError("lattice resolution must be at least 2")
    if len(mesh.vertices) == 0:
        raise ValueError("cannot build a lattice over an empty mesh")
    lo, hi = mesh.bounding_box()
    axes = [np.linspace(lo[d], hi[d], resolution) for d in range(3)]
    n = resolution
    points = np.empty((n * n * n, 3))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                points[(i * n + j) * n + k] = (axes[0][i], axes[1][j], axes[2][k])
    pairs = []
    for i in range(n):
        mirror = n - 1 - i
        if mirror < i:
            continue
        for j in range(n):
            for k in range(n):
                pairs.append(((i * n + j) * n + k, (mirror * n + j) * n + k))
    spacing = (hi - lo) / (n - 1)
    return ControlLattice(
        resolution=n,
        points=points,
        symmetry_pairs=pairs,
        max_spacing=float(spacing.max()),
    )


def sample_deformation(
    lattice: ControlLattice, stddev: float, rng: np.random.Generator
) -> DeformationField:
    """Draw Gaussian control translations, mirrored across the symmetry plane.

    Each pair's lower-index point gets an i.i.d. N(0, stddev^2) translation
    per component; its partner receives the x-negated copy. Self-paired
    points (on the mirror plane) get a zero x component so the mirror
    constraint holds exactly.
    """
    if stddev < 0:
        raise ValueError("stddev must be nonnegative")
    offsets = np.zeros_like(lattice.points)
    for a, b in lattice.symmetry_pairs:
        delta = rng.normal(0.0, stddev, size=3)
        if a == b:
            delta[0] = 0.0
            offsets[a] = delta
        else:
            offsets[a] = delta
            offsets[b] = delta * np.array([-1.0, 1.0, 1.0])
    return DeformationField(offsets=offsets)


def apply_deformation(
    mesh: Mesh, lattice: ControlLattice, field: DeformationField
) -> Mesh:
    """Warp the mesh by falloff-blended control translations.

    Each vertex moves by the convex combination of the translations of
    control points within max_spacing, weighted by
    omega(d) = max(0, 1 - d/max_spacing)^2. Weights are normalized to sum
    to 1, so a uniform field translates the mesh rigidly. Topology is
    unchanged; normals are recomputed.
    """
    if field.offsets.shape != lattice.points.shape:
        raise ValueError("deformation field does not match lattice")
    d_max = lattice.max_spacing
    dist = np.linalg.norm(
        mesh.vertices[:, None, :] - lattice.points[None, :, :], axis=2
    )
    weights = np.maximum(0.0, 1.0 - dist / d_max) ** 2
    totals = weights.sum(axis=1)
    empty = np.nonzero(totals <= 0.0)[0]
    if empty.size:
        v = int(empty[0])
        raise ValueError(
            f"vertex {v} at {mesh.vertices[v]} has no control point within "
            f"{d_max:.6g}; increase the lattice resolution"
        )
    displacement = (weights / totals[:, None]) @ field.offsets
    deformed = Mesh(mesh.vertices + displacement, mesh.faces.copy())
    deformed.normals = compute_vertex_normals(deformed)
    return deformed


def mirror_x(points: np.ndarray) -> np.ndarray:
    """Reflect points across the x = 0 plane."""
    return points * np.array([-1.0, 1.0, 1.0])


def symmetry_error(mesh: Mesh) -> float:
    """Max distance from each vertex's mirror image to its nearest vertex.

    Zero (up to float noise) for bilaterally symmetric meshes. Quadratic
    in vertex count; intended for validation at augmentation time.
    """
    reflected = mirror_x(mesh.vertices)
    dist = np.linalg.norm(reflected[:, None, :] - mesh.vertices[None, :, :], axis=2)
    return float(dist.min(axis=1).max())
