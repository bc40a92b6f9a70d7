"""Viewpoint representation, discretization, and rotation geometry.

Angle conventions used throughout the package:

- Azimuth (theta): horizontal angle of the camera around the object,
  stored canonically in [0, 360) degrees.
- Elevation (phi): vertical angle above the equatorial plane, in
  [-90, 90] degrees.
- In-plane rotation (psi): roll of the camera about its optical axis,
  stored canonically in [-180, 180) degrees.

World coordinate system: z up. A camera at azimuth theta, elevation phi
sits in direction (cos phi cos theta, cos phi sin theta, sin phi) from
the origin and looks back at the origin. Camera space: x right, y up,
z backward (the camera looks down -z). The camera's right axis is always
the horizontal vector (-sin theta, cos theta, 0), which stays well
defined at elevation +-90 and serves as the fixed fallback there.
Positive psi rolls the camera counterclockwise about its optical axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ViewpointTuple",
    "BinLayout",
    "canonical_azimuth_deg",
    "canonical_inplane_deg",
    "discretize",
    "bin_center",
    "viewpoint_distance",
    "look_at_rotation",
    "rotation_from_viewpoint",
    "rotation_geodesic",
    "assert_rotation",
]

_ROTATION_TOL = 1e-9


def canonical_azimuth_deg(angle_deg: float) -> float:
    """Wrap an azimuth into [0, 360). Idempotent."""
    wrapped = angle_deg % 360.0
    if wrapped >= 360.0:  # float modulo can round up to the divisor
        wrapped = 0.0
    return wrapped


def canonical_inplane_deg(angle_deg: float) -> float:
    """Wrap an in-plane angle into [-180, 180). Idempotent."""
    wrapped = (angle_deg + 180.0) % 360.0 - 180.0
    if wrapped >= 180.0:
        wrapped = -180.0
    return wrapped


@dataclass(frozen=True)
class ViewpointTuple:
    """Continuous camera viewpoint (azimuth, elevation, in-plane) in degrees.

    Azimuth and in-plane angles wrap into their canonical ranges on
    construction. Elevation must lie in [-90, 90]; values outside by more
    than 1e-9 are an error, values inside that slack are clamped.
    """

    azimuth_deg: float
    elevation_deg: float
    inplane_deg: float

    def __post_init__(self):
        object.__setattr__(
            self, "azimuth_deg", canonical_azimuth_deg(float(self.azimuth_deg))
        )
        elev = float(self.elevation_deg)
        if not math.isfinite(elev) or abs(elev) > 90.0 + 1e-9:
            raise ValueError(f"elevation {elev} outside [-90, 90]")
        object.__setattr__(self, "elevation_deg", min(90.0, max(-90.0, elev)))
        object.__setattr__(
            self, "inplane_deg", canonical_inplane_deg(float(self.inplane_deg))
        )


# Canonical range start and span, per angle group.
_AZIMUTH_RANGE = (0.0, 360.0)
_ELEVATION_RANGE = (-90.0, 180.0)
_INPLANE_RANGE = (-180.0, 360.0)


@dataclass(frozen=True)
class BinLayout:
    """Even discretization of the three angle ranges.

    Bin k of an angle group covers [start + k*w, start + (k+1)*w) degrees,
    where w is the group's range divided by its bin count. The groups are
    concatenated (azimuth, then elevation, then in-plane), not crossed.
    """

    azimuth_bins: int = 360
    elevation_bins: int = 180
    inplane_bins: int = 360

    def __post_init__(self):
        for name in ("azimuth_bins", "elevation_bins", "inplane_bins"):
            count = getattr(self, name)
            if not isinstance(count, int) or count < 1:
                raise ValueError(f"{name} must be a positive integer, got {count!r}")

    @property
    def total_bins(self) -> int:
        return self.azimuth_bins + self.elevation_bins + self.inplane_bins

    @property
    def azimuth_width(self) -> float:
        return _AZIMUTH_RANGE[1] / self.azimuth_bins

    @property
    def elevation_width(self) -> float:
        return _ELEVATION_RANGE[1] / self.elevation_bins

    @property
    def inplane_width(self) -> float:
        return _INPLANE_RANGE[1] / self.inplane_bins


def _bin_index(angle_deg: float, range_start: float, span: float, bins: int) -> int:
    index = int(math.floor((angle_deg - range_start) / (span / bins)))
    # Elevation's closed top end (+90) lands exactly on the upper edge.
    return min(max(index, 0), bins - 1)


def discretize(v: ViewpointTuple, layout: BinLayout) -> tuple[int, int, int]:
    """Map a viewpoint to its (azimuth, elevation, inplane) bin indices."""
    return (
        _bin_index(v.azimuth_deg, *_AZIMUTH_RANGE, layout.azimuth_bins),
        _bin_index(v.elevation_deg, *_ELEVATION_RANGE, layout.elevation_bins),
        _bin_index(v.inplane_deg, *_INPLANE_RANGE, layout.inplane_bins),
    )


def bin_center(bins: tuple[int, int, int], layout: BinLayout) -> ViewpointTuple:
    """Viewpoint at the center of the given bin triple.

    Inverse of :func:`discretize` up to half a bin width;
    discretize(bin_center(b)) == b for every in-range b.
    """
    a, e, i = bins
    counts = (layout.azimuth_bins, layout.elevation_bins, layout.inplane_bins)
    for index, count, name in zip(bins, counts, ("azimuth", "elevation", "inplane")):
        if not 0 <= index < count:
            raise IndexError(f"{name} bin {index} out of range [0, {count})")
    return ViewpointTuple(
        azimuth_deg=_AZIMUTH_RANGE[0] + (a + 0.5) * layout.azimuth_width,
        elevation_deg=_ELEVATION_RANGE[0] + (e + 0.5) * layout.elevation_width,
        inplane_deg=_INPLANE_RANGE[0] + (i + 0.5) * layout.inplane_width,
    )


def viewpoint_distance(a: ViewpointTuple, b: ViewpointTuple) -> float:
    """Distance between two viewpoints, in radians.

    Great-circle distance between the (azimuth, elevation) points on the
    unit sphere, plus the absolute in-plane difference wrapped into
    [-pi, pi]. Symmetric; zero iff the sphere points coincide and the
    in-plane angles are equal.
    """
    theta_a, phi_a = math.radians(a.azimuth_deg), math.radians(a.elevation_deg)
    theta_b, phi_b = math.radians(b.azimuth_deg), math.radians(b.elevation_deg)
    cos_arc = math.sin(phi_a) * math.sin(phi_b) + math.cos(phi_a) * math.cos(
        phi_b
    ) * math.cos(theta_a - theta_b)
    sphere = math.acos(min(1.0, max(-1.0, cos_arc)))
    inplane = abs(canonical_inplane_deg(a.inplane_deg - b.inplane_deg))
    return sphere + math.radians(inplane)


def look_at_rotation(v: ViewpointTuple) -> np.ndarray:
    """World-to-camera rotation for a camera at viewpoint v looking at the origin.

    Rows are the camera's right, up, and backward axes expressed in world
    coordinates, pre-multiplied by the in-plane roll. Translation is not
    included; see renderer.camera_pose for the full extrinsics.
    """
    theta = math.radians(v.azimuth_deg)
    phi = math.radians(v.elevation_deg)
    psi = math.radians(v.inplane_deg)
    backward = np.array(
        [math.cos(phi) * math.cos(theta), math.cos(phi) * math.sin(theta), math.sin(phi)]
    )
    right = np.array([-math.sin(theta), math.cos(theta), 0.0])
    up = np.cross(backward, right)
    base = np.stack([right, up, backward])
    cos_p, sin_p = math.cos(psi), math.sin(psi)
    roll = np.array([[cos_p, sin_p, 0.0], [-sin_p, cos_p, 0.0], [0.0, 0.0, 1.0]])
    return roll @ base


# Camera orientation at the reference viewpoint (0, 0, 0).
_REFERENCE_ROTATION = look_at_rotation(ViewpointTuple(0.0, 0.0, 0.0))


def rotation_from_viewpoint(v: ViewpointTuple) -> np.ndarray:
    """Rotation matrix of a viewpoint relative to the (0, 0, 0) reference pose.

    Identity at (0, 0, 0); a pure azimuth change of alpha degrees is a
    rotation by alpha about the world up axis. Used by the rotation-based
    evaluation metrics; the renderer shares the same look-at convention.
    """
    return look_at_rotation(v) @ _REFERENCE_ROTATION.T


def assert_rotation(matrix: np.ndarray, tol: float = _ROTATION_TOL) -> None:
    """Raise ValueError unless matrix is a proper rotation (orthonormal, det +1)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {matrix.shape}")
    if not np.allclose(matrix.T @ matrix, np.eye(3), atol=tol):
        raise ValueError("matrix is not orthonormal")
    if abs(np.linalg.det(matrix) - 1.0) > tol:
        raise ValueError("matrix determinant is not +1")


def rotation_geodesic(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle in [0, pi] between two rotations.

    Mathematically arccos((trace(R1^T R2) - 1) / 2); evaluated through
    atan2 of the relative rotation's sine (from its skew part) and cosine
    (from its trace), which stays accurate near both 0 and pi.
    """
    assert_rotation(r1)
    assert_rotation(r2)
    rel = np.asarray(r1).T @ np.asarray(r2)
    cos_angle = min(1.0, max(-1.0, (np.trace(rel) - 1.0) / 2.0))
    sin_angle = 0.5 * math.sqrt(
        (rel[2, 1] - rel[1, 2]) ** 2
        + (rel[0, 2] - rel[2, 0]) ** 2
        + (rel[1, 0] - rel[0, 1]) ** 2
    )
    return math.atan2(sin_angle, cos_angle)
