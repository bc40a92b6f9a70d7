"""Minimal software rasterizer with exact binary alpha masks.

Renders a triangle mesh from polar camera parameters into an RGBA image:
perspective pinhole projection, z-buffered triangle fill tested at pixel
centers, Lambertian point lights plus an ambient term, white material.
Alpha is 255 exactly where geometry covers the pixel center and passes
the depth test, 0 elsewhere; there is no antialiasing, so downstream
alpha composition is an exact per-pixel selection.

Projection conventions:
- focal length is interpreted against a 32 mm sensor width (the
  SENSOR_WIDTH_MM constant), so the horizontal field of view is
  2*atan(32 / (2*focal)); aspect 1.0 gives square pixels.
- pixel (row, col) has its center at (col + 0.5, row + 0.5); row 0 is the
  top of the image, and the camera's up axis maps to decreasing rows.
- depth is the distance along the optical axis (-z in camera space),
  interpolated perspective-correctly (linear in 1/z).

Triangles that straddle the near plane are an error (no clipping, by
scope); triangles entirely on the near side of the near plane are
skipped, so a mesh fully behind the camera renders as transparent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modelaug import Mesh
from .paramsampler import CameraParams, LightConfig
from .viewgeom import ViewpointTuple, look_at_rotation

__all__ = [
    "RgbaImage",
    "RenderConfig",
    "SENSOR_WIDTH_MM",
    "normalize_mesh",
    "camera_position",
    "camera_pose",
    "focal_pixels",
    "rasterize",
    "project_full_bbox",
]

SENSOR_WIDTH_MM = 32.0
LIGHT_ENERGY_SCALE = 0.1  # maps a typical sampled energy (~4) to ~0.4 intensity


@dataclass
class RgbaImage:
    """Row-major 8-bit RGBA image with binary alpha coverage."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 4:
            raise ValueError("pixels must have shape (height, width, 4)")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image dimensions must be at least 1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]


@dataclass
class RenderConfig:
    width: int = 128
    height: int = 128
    ambient: float = 0.3
    near: float = 0.05
    far: float = 100.0
    sensor_width: float = SENSOR_WIDTH_MM

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        if not 0 < self.near < self.far:
            raise ValueError("need 0 < near < far")


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin and scale its diagonal to 1.

    Isotropic scaling only, so extent ratios are preserved. Idempotent.
    """
    lo, hi = mesh.bounding_box()
    diagonal = float(np.linalg.norm(hi - lo))
    if diagonal <= 0.0:
        raise ValueError("mesh has zero extent; cannot normalize")
    center = (lo + hi) / 2.0
    vertices = (mesh.vertices - center) / diagonal
    return Mesh(vertices, mesh.faces.copy(), mesh.normals)


def camera_position(params: CameraParams) -> np.ndarray:
    """Optical center in world coordinates from the polar parameters."""
    theta = np.radians(params.azimuth_deg)
    phi = np.radians(params.elevation_deg)
    return params.rho * np.array(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)]
    )


def camera_pose(params: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rigid transform (R, t) with p_cam = R @ p_world + t.

    The camera sits at the polar position, looks at the origin (forward is
    -z, so the origin maps to (0, 0, -rho)), and rolls by the in-plane
    angle. At elevation +-90 the right axis keeps its equatorial
    direction (-sin azimuth, cos azimuth, 0), which defines the up vector
    there.
    """
    rotation = look_at_rotation(
        ViewpointTuple(params.azimuth_deg, params.elevation_deg, params.inplane_deg)
    )
    center = camera_position(params)
    return rotation, -rotation @ center


def focal_pixels(params: CameraParams, config: RenderConfig) -> float:
    """Focal length in pixels for the sensor-width convention."""
    return params.focal / config.sensor_width * config.width


def _camera_space_vertices(mesh, params, config):
    rotation, translation = camera_pose(params)
    vertices_cam = mesh.vertices @ rotation.T + translation
    lo, hi = mesh.bounding_box()
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    if np.linalg.norm(camera_position(params) - center) <= radius:
        raise ValueError("camera is inside the mesh bounding sphere")
    return vertices_cam


def _project(vertices_cam, params, config):
    f_px = focal_pixels(params, config)
    cx, cy = config.width / 2.0, config.height / 2.0
    depth = -vertices_cam[:, 2]
    x = cx + f_px * vertices_cam[:, 0] / depth
    y = cy - f_px * vertices_cam[:, 1] / depth
    return np.stack([x, y], axis=1)


def _face_shade(mesh, lights: LightConfig, view_point: np.ndarray, ambient: float):
    """Flat per-face intensity: ambient plus energy-scaled Lambert terms.

    Face normals are flipped toward the camera (two-sided shading) and
    point lights have no distance falloff; they sit on a fixed-radius
    sphere far from the unit-scale object.
    """
    a, b, c = (mesh.vertices[mesh.faces[:, k]] for k in range(3))
    normals = np.cross(b - a, c - a)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
    centroids = (a + b + c) / 3.0
    toward_view = np.einsum("ij,ij->i", view_point - centroids, normals)
    normals[toward_view < 0.0] *= -1.0
    shade = np.full(len(mesh.faces), ambient if lights.ambient else 0.0)
    for position, energy in lights.lights:
        direction = position - centroids
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        lambert = np.maximum(0.0, np.einsum("ij,ij->i", normals, direction))
        shade += energy * LIGHT_ENERGY_SCALE * lambert
    return np.clip(shade, 0.0, 1.0)


def rasterize(
    mesh: Mesh,
    params: CameraParams,
    lights: LightConfig,
    config: RenderConfig,
    return_depth: bool = False,
):
    """Render the mesh and return the image with its viewpoint label.

    The label is exactly the camera's (azimuth, elevation, in-plane)
    tuple; the render is a deterministic function of its inputs. With
    return_depth, also returns the z-buffer (distance along the optical
    axis; inf where uncovered) for verification against ray casting.
    """
    height, width = config.height, config.width
    rgba = np.zeros((height, width, 4), dtype=np.uint8)
    zbuffer = np.full((height, width), np.inf)
    label = ViewpointTuple(params.azimuth_deg, params.elevation_deg, params.inplane_deg)
    if len(mesh.faces) == 0:
        if return_depth:
            return RgbaImage(rgba), label, zbuffer
        return RgbaImage(rgba), label

    vertices_cam = _camera_space_vertices(mesh, params, config)
    depths = -vertices_cam[:, 2]
    front = depths >= config.near
    face_front = front[mesh.faces]
    straddling = np.any(face_front, axis=1) & ~np.all(face_front, axis=1)
    if np.any(straddling):
        raise ValueError(
            f"{int(straddling.sum())} triangle(s) intersect the near plane; "
            "move the camera back or enlarge the near distance"
        )
    if np.any(depths[front] > config.far):
        raise ValueError("mesh extends beyond the far distance")

    screen = _project(vertices_cam, params, config)
    shades = _face_shade(mesh, lights, camera_position(params), config.ambient)

    for face_index in np.nonzero(np.all(face_front, axis=1))[0]:
        i0, i1, i2 = mesh.faces[face_index]
        (x0, y0), (x1, y1), (x2, y2) = screen[i0], screen[i1], screen[i2]
        z0, z1, z2 = vertices_cam[[i0, i1, i2], 2]
        denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if denom == 0.0:  # degenerate in screen space
            continue
        col_lo = max(0, int(np.ceil(min(x0, x1, x2) - 0.5)))
        col_hi = min(width - 1, int(np.floor(max(x0, x1, x2) - 0.5)))
        row_lo = max(0, int(np.ceil(min(y0, y1, y2) - 0.5)))
        row_hi = min(height - 1, int(np.floor(max(y0, y1, y2) - 0.5)))
        if col_lo > col_hi or row_lo > row_hi:
            continue
        px = np.arange(col_lo, col_hi + 1) + 0.5
        py = np.arange(row_lo, row_hi + 1) + 0.5
        gx, gy = np.meshgrid(px, py)
        lam0 = ((y1 - y2) * (gx - x2) + (x2 - x1) * (gy - y2)) / denom
        lam1 = ((y2 - y0) * (gx - x2) + (x0 - x2) * (gy - y2)) / denom
        lam2 = 1.0 - lam0 - lam1
        inside = (lam0 >= 0.0) & (lam1 >= 0.0) & (lam2 >= 0.0)
        if not np.any(inside):
            continue
        inv_z = lam0 / z0 + lam1 / z1 + lam2 / z2
        depth = -1.0 / inv_z
        window = zbuffer[row_lo : row_hi + 1, col_lo : col_hi + 1]
        wins = inside & (depth < window)
        window[wins] = depth[wins]
        gray = np.uint8(round(shades[face_index] * 255.0))
        target = rgba[row_lo : row_hi + 1, col_lo : col_hi + 1]
        target[wins] = (gray, gray, gray, 255)

    if return_depth:
        return RgbaImage(rgba), label, zbuffer
    return RgbaImage(rgba), label


def project_full_bbox(
    mesh: Mesh, params: CameraParams, config: RenderConfig
) -> tuple[int, int, int, int]:
    """Tight pixel box [l, t, r, b) over all projected vertices.

    Uses the vertices in front of the near plane; errors if there are
    none. The box is clamped to the image bounds and always spans at
    least one pixel, so the alpha coverage of rasterize is contained in
    it (triangles are convex hulls of their vertices).
    """
    vertices_cam = _camera_space_vertices(mesh, params, config)
    front = -vertices_cam[:, 2] >= config.near
    if not np.any(front):
        raise ValueError("no vertex in front of the camera")
    screen = _project(vertices_cam[front], params, config)
    left = int(np.floor(screen[:, 0].min()))
    right = int(np.ceil(screen[:, 0].max()))
    top = int(np.floor(screen[:, 1].min()))
    bottom = int(np.ceil(screen[:, 1].max()))
    left = min(max(left, 0), config.width - 1)
    right = max(min(right, config.width), left + 1)
    top = min(max(top, 0), config.height - 1)
    bottom = max(min(bottom, config.height), top + 1)
    return left, top, right, bottom
