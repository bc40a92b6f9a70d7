"""Distributions and samplers for all randomized synthesis parameters.

Camera position (distance rho, azimuth, elevation) and roll are drawn
either from per-category kernel density estimates fitted to annotation
data, or from a parametric fallback (truncated Gaussians and a uniform
azimuth). Lighting is fully parametric: 1 to 10 white point lights on a
spherical band plus an ambient term. Crop patterns are four per-edge
KDEs over the relative offset between the annotated box and the full
projected object box.

Every sampler is a deterministic function of its inputs and the supplied
numpy Generator; derive_rng builds independent, reproducible per-task
streams from a master seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .viewgeom import canonical_azimuth_deg, canonical_inplane_deg

__all__ = [
    "Kde1D",
    "LightConfig",
    "CameraParams",
    "CameraKdeSet",
    "CropPatternModel",
    "fit_kde",
    "kde_sample",
    "sample_lighting",
    "sample_camera",
    "fit_crop_model",
    "sample_crop",
    "derive_rng",
    "load_annotations",
    "fit_category_models",
    "serialize_models",
    "deserialize_models",
    "LIGHT_SPHERE_RADIUS",
    "FIXED_FOCAL",
    "FIXED_ASPECT",
]

LIGHT_SPHERE_RADIUS = 14.14
LIGHT_LATITUDE_RANGE = (0.0, 60.0)
LIGHT_ENERGY_MEAN = 4.0
LIGHT_ENERGY_STD = 3.0
MAX_LIGHTS = 10

FIXED_FOCAL = 35.0
FIXED_ASPECT = 1.0

# Fallback camera distribution parameters.
FALLBACK_RHO = (7.0, 3.0, 6.0)  # mean, std, lower bound
FALLBACK_ELEVATION = (15.0, 15.0, -10.0, 90.0)  # mean, std, low, high
FALLBACK_INPLANE_STD = 5.0

_MAX_REJECTION_ITERATIONS = 10_000


def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _acceptance_probability(mean, std, low=None, high=None) -> float:
    lo = _normal_cdf((low - mean) / std) if low is not None else 0.0
    hi = _normal_cdf((high - mean) / std) if high is not None else 1.0
    return hi - lo

# Rejection sampling must terminate quickly for the built-in truncations.
assert _acceptance_probability(*FALLBACK_RHO[:2], low=FALLBACK_RHO[2]) > 0.1
assert (
    _acceptance_probability(
        FALLBACK_ELEVATION[0],
        FALLBACK_ELEVATION[1],
        low=FALLBACK_ELEVATION[2],
        high=FALLBACK_ELEVATION[3],
    )
    > 0.1
)
assert _acceptance_probability(LIGHT_ENERGY_MEAN, LIGHT_ENERGY_STD, low=0.0) > 0.1


def _truncated_normal(rng, mean, std, low=None, high=None) -> float:
    """Rejection-sample N(mean, std^2) restricted to [low, high]."""
    for _ in range(_MAX_REJECTION_ITERATIONS):
        draw = rng.normal(mean, std)
        if (low is None or draw >= low) and (high is None or draw <= high):
            return float(draw)
    raise RuntimeError(
        f"truncated normal N({mean}, {std}^2) on [{low}, {high}] did not accept"
    )


@dataclass
class Kde1D:
    """Gaussian-kernel density estimate: stored samples plus one bandwidth.

    Circular models live on [0, 360); their samples are canonicalized on
    construction and density queries replicate each sample at +-360 so the
    density wraps.
    """

    samples: np.ndarray
    bandwidth: float
    circular: bool = False

    def __post_init__(self):
        self.samples = np.atleast_1d(np.asarray(self.samples, dtype=float))
        if self.samples.size == 0:
            raise ValueError("Kde1D needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("Kde1D samples must be finite")
        if not self.bandwidth > 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.circular:
            self.samples = np.array(
                [canonical_azimuth_deg(x) for x in self.samples]
            )

    def density(self, x) -> np.ndarray:
        """Estimated density at query points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        centers = self.samples
        if self.circular:
            centers = np.concatenate([centers - 360.0, centers, centers + 360.0])
        z = (x[:, None] - centers[None, :]) / self.bandwidth
        kernel = np.exp(-0.5 * z * z) / (self.bandwidth * math.sqrt(2.0 * math.pi))
        # replication adds copies, not mass: normalize by the original count
        return kernel.sum(axis=1) / self.samples.size

    def to_dict(self) -> dict:
        return {
            "samples": self.samples.tolist(),
            "bandwidth": self.bandwidth,
            "circular": self.circular,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Kde1D":
        return cls(
            samples=np.asarray(data["samples"], dtype=float),
            bandwidth=float(data["bandwidth"]),
            circular=bool(data.get("circular", False)),
        )


def fit_kde(samples, circular: bool = False) -> Kde1D:
    """Fit a Gaussian KDE with Silverman's rule bandwidth.

    h = 1.06 * std * n^(-1/5), floored at 1e-6 of the sample range and at
    an absolute 1e-9 so degenerate sample sets (n = 1, or all identical)
    still produce a valid model.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("cannot fit a KDE to an empty sample set")
    if not np.all(np.isfinite(samples)):
        raise ValueError("KDE samples must be finite")
    bandwidth = 1.06 * samples.std() * samples.size ** (-1.0 / 5.0)
    bandwidth = max(bandwidth, 1e-6 * np.ptp(samples), 1e-9)
    return Kde1D(samples=samples, bandwidth=float(bandwidth), circular=circular)


def kde_sample(model: Kde1D, rng: np.random.Generator) -> float:
    """Draw from the KDE: pick a stored sample, add Gaussian noise."""
    center = model.samples[rng.integers(model.samples.size)]
    draw = center + rng.normal(0.0, model.bandwidth)
    if model.circular:
        draw = canonical_azimuth_deg(draw)
    return float(draw)


def _rejected_kde_sample(model: Kde1D, rng, predicate) -> float:
    # kernel tails can step outside a parameter's valid range; re-draw
    for _ in range(_MAX_REJECTION_ITERATIONS):
        draw = kde_sample(model, rng)
        if predicate(draw):
            return draw
    raise RuntimeError("KDE rejection sampling did not accept a draw")


@dataclass
class LightConfig:
    """Point light set: (position, energy) pairs plus an ambient flag.

    Positions lie on the sphere of radius 14.14 between latitudes 0 and 60
    degrees; energies are nonnegative; color is fixed white.
    """

    lights: list[tuple[np.ndarray, float]]
    ambient: bool = True

    def __post_init__(self):
        if not 1 <= len(self.lights) <= MAX_LIGHTS:
            raise ValueError(f"light count must be in [1, {MAX_LIGHTS}]")
        checked = []
        for position, energy in self.lights:
            position = np.asarray(position, dtype=float).reshape(3)
            radius = np.linalg.norm(position)
            if abs(radius - LIGHT_SPHERE_RADIUS) > 1e-9:
                raise ValueError(f"light at radius {radius}, expected {LIGHT_SPHERE_RADIUS}")
            latitude = math.degrees(math.asin(position[2] / radius))
            if not (
                LIGHT_LATITUDE_RANGE[0] - 1e-9
                <= latitude
                <= LIGHT_LATITUDE_RANGE[1] + 1e-9
            ):
                raise ValueError(f"light latitude {latitude} outside band")
            if energy < 0:
                raise ValueError("light energy must be nonnegative")
            checked.append((position, float(energy)))
        self.lights = checked


def sample_lighting(rng: np.random.Generator) -> LightConfig:
    """Sample 1..10 point lights, area-uniform on the latitude band.

    Latitude is drawn by uniform sine (area-uniform on the sphere band),
    longitude uniformly, and energy from N(4, 3^2) truncated at 0.
    """
    count = int(rng.integers(1, MAX_LIGHTS + 1))
    lights = []
    sin_lo = math.sin(math.radians(LIGHT_LATITUDE_RANGE[0]))
    sin_hi = math.sin(math.radians(LIGHT_LATITUDE_RANGE[1]))
    for _ in range(count):
        latitude = math.asin(rng.uniform(sin_lo, sin_hi))
        longitude = math.radians(rng.uniform(0.0, 360.0))
        position = LIGHT_SPHERE_RADIUS * np.array(
            [
                math.cos(latitude) * math.cos(longitude),
                math.cos(latitude) * math.sin(longitude),
                math.sin(latitude),
            ]
        )
        energy = _truncated_normal(rng, LIGHT_ENERGY_MEAN, LIGHT_ENERGY_STD, low=0.0)
        lights.append((position, energy))
    return LightConfig(lights=lights, ambient=True)


@dataclass
class CameraParams:
    """Camera extrinsics in polar form plus the fixed intrinsics (35, 1.0)."""

    rho: float
    azimuth_deg: float
    elevation_deg: float
    inplane_deg: float
    focal: float = FIXED_FOCAL
    aspect: float = FIXED_ASPECT

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        self.azimuth_deg = canonical_azimuth_deg(float(self.azimuth_deg))
        if abs(self.elevation_deg) > 90.0 + 1e-9:
            raise ValueError(f"elevation {self.elevation_deg} outside [-90, 90]")
        self.elevation_deg = min(90.0, max(-90.0, float(self.elevation_deg)))
        self.inplane_deg = canonical_inplane_deg(float(self.inplane_deg))


@dataclass
class CameraKdeSet:
    """Fitted camera parameter densities for one category."""

    rho: Kde1D
    azimuth: Kde1D
    elevation: Kde1D
    inplane: Kde1D


def sample_camera(
    source: CameraKdeSet | None, rng: np.random.Generator
) -> CameraParams:
    """Draw camera extrinsics from fitted KDEs or the parametric fallback.

    KDE mode draws the four parameters independently from their models,
    re-drawing elevation values that leave [-90, 90] and in-plane values
    that leave [-180, 180) so the kernels' tails cannot produce invalid
    angles. Fallback mode: rho ~ N(7, 3^2) with rho >= 6, elevation ~
    N(15, 15^2) in [-10, 90], azimuth uniform on [0, 360), in-plane ~
    N(0, 5^2) degrees.
    """
    if source is None:
        rho = _truncated_normal(rng, *FALLBACK_RHO[:2], low=FALLBACK_RHO[2])
        elevation = _truncated_normal(
            rng,
            FALLBACK_ELEVATION[0],
            FALLBACK_ELEVATION[1],
            low=FALLBACK_ELEVATION[2],
            high=FALLBACK_ELEVATION[3],
        )
        azimuth = rng.uniform(0.0, 360.0)
        inplane = rng.normal(0.0, FALLBACK_INPLANE_STD)
        return CameraParams(rho, azimuth, elevation, inplane)
    rho = _rejected_kde_sample(source.rho, rng, lambda x: x > 0.0)
    azimuth = kde_sample(source.azimuth, rng)
    elevation = _rejected_kde_sample(source.elevation, rng, lambda x: abs(x) <= 90.0)
    inplane = canonical_inplane_deg(kde_sample(source.inplane, rng))
    return CameraParams(rho, azimuth, elevation, inplane)


@dataclass
class CropPatternModel:
    """Per-edge KDEs of (annotated edge - full edge) / full box extent."""

    left: Kde1D
    right: Kde1D
    top: Kde1D
    bottom: Kde1D


def _box_extent(box) -> tuple[float, float]:
    l, t, r, b = (float(x) for x in box)
    return r - l, b - t


def fit_crop_model(pairs) -> CropPatternModel:
    """Fit the four edge-offset KDEs from (full_box, gt_box) pairs.

    Boxes are [left, top, right, bottom]. Horizontal edge offsets are
    normalized by the full box width, vertical ones by its height, so the
    pattern is scale invariant.
    """
    if not pairs:
        raise ValueError("need at least one (full_box, gt_box) pair")
    offsets = {edge: [] for edge in ("left", "right", "top", "bottom")}
    for full, gt in pairs:
        width, height = _box_extent(full)
        if width <= 0 or height <= 0:
            raise ValueError(f"degenerate full box {full}")
        offsets["left"].append((gt[0] - full[0]) / width)
        offsets["right"].append((gt[2] - full[2]) / width)
        offsets["top"].append((gt[1] - full[1]) / height)
        offsets["bottom"].append((gt[3] - full[3]) / height)
    return CropPatternModel(
        **{edge: fit_kde(values) for edge, values in offsets.items()}
    )


def sample_crop(
    model: CropPatternModel,
    full_box,
    bounds: tuple[float, float],
    rng: np.random.Generator,
    min_side: float = 8.0,
) -> tuple[float, float, float, float]:
    """Sample a crop box around the full object box.

    The sampled per-edge offsets perturb the full box; the result is then
    clamped so it stays inside the image bounds, keeps at least min_side
    pixels per side, and always overlaps the full box with positive area.
    """
    full_l, full_t, full_r, full_b = (float(x) for x in full_box)
    width, height = full_r - full_l, full_b - full_t
    if width <= 0 or height <= 0:
        raise ValueError(f"full box {full_box} has nonpositive extent")
    image_w, image_h = float(bounds[0]), float(bounds[1])
    left = full_l + kde_sample(model.left, rng) * width
    right = full_r + kde_sample(model.right, rng) * width
    top = full_t + kde_sample(model.top, rng) * height
    bottom = full_b + kde_sample(model.bottom, rng) * height

    def clamp_axis(lo, hi, full_lo, full_hi, limit):
        lo = min(max(lo, 0.0), max(0.0, full_hi - 1.0))
        hi = max(min(hi, limit), min(full_lo + 1.0, limit))
        if hi - lo < min_side:
            hi = min(limit, lo + min_side)
            if hi - lo < min_side:
                lo = max(0.0, hi - min_side)
        return lo, hi

    left, right = clamp_axis(left, right, full_l, full_r, image_w)
    top, bottom = clamp_axis(top, bottom, full_t, full_b, image_h)
    return (left, top, right, bottom)


def derive_rng(master_seed: int, *parts) -> np.random.Generator:
    """Independent, reproducible generator for a keyed task.

    The key parts (strings or integers) are hashed so that distinct tasks
    get decorrelated streams and adding tasks never perturbs existing
    ones. Identical (master_seed, parts) always yields the same stream.
    """
    digest = hashlib.sha256(
        "\x1f".join(str(p) for p in parts).encode("utf-8")
    ).digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]
    return np.random.default_rng([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *words])


# --- annotation input and model serialization ---------------------------------

_ANNOTATION_FIELDS = (
    "category",
    "rho",
    "azimuth_deg",
    "elevation_deg",
    "inplane_deg",
    "full_box",
    "gt_box",
)


def load_annotations(path: str | Path) -> list[dict]:
    """Read JSON-lines annotation records, validating required fields."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({err})") from None
        missing = [f for f in _ANNOTATION_FIELDS if f not in record]
        if missing:
            raise ValueError(f"{path}:{lineno}: missing fields {missing}")
        for box_field in ("full_box", "gt_box"):
            if len(record[box_field]) != 4:
                raise ValueError(f"{path}:{lineno}: {box_field} must be [l,t,r,b]")
        records.append(record)
    return records


def fit_category_models(
    records: list[dict],
) -> tuple[CameraKdeSet, CropPatternModel]:
    """Fit one category's camera KDEs and crop model from its records."""
    if not records:
        raise ValueError("no records for category")
    camera = CameraKdeSet(
        rho=fit_kde([r["rho"] for r in records]),
        azimuth=fit_kde([r["azimuth_deg"] for r in records], circular=True),
        elevation=fit_kde([r["elevation_deg"] for r in records]),
        inplane=fit_kde([r["inplane_deg"] for r in records]),
    )
    crop = fit_crop_model([(r["full_box"], r["gt_box"]) for r in records])
    return camera, crop


def serialize_models(
    models: dict[str, tuple[CameraKdeSet, CropPatternModel]],
) -> dict:
    """Fitted models for all categories as one JSON-ready document."""
    doc = {"categories": {}}
    for category, (camera, crop) in sorted(models.items()):
        doc["categories"][category] = {
            "camera": {
                name: getattr(camera, name).to_dict()
                for name in ("rho", "azimuth", "elevation", "inplane")
            },
            "crop": {
                name: getattr(crop, name).to_dict()
                for name in ("left", "right", "top", "bottom")
            },
        }
    return doc


def deserialize_models(doc: dict) -> dict[str, tuple[CameraKdeSet, CropPatternModel]]:
    models = {}
    for category, entry in doc["categories"].items():
        camera = CameraKdeSet(
            **{name: Kde1D.from_dict(entry["camera"][name])
               for name in ("rho", "azimuth", "elevation", "inplane")}
        )
        crop = CropPatternModel(
            **{name: Kde1D.from_dict(entry["crop"][name])
               for name in ("left", "right", "top", "bottom")}
        )
        models[category] = (camera, crop)
    return models
