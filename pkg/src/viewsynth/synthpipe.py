"""End-to-end labeled image synthesis: render, composite, crop, manifest.

For each (model, image index) pair the pipeline derives an independent
rng stream from the master seed, samples lighting and camera parameters,
renders the mesh, blends it over a randomly chosen background window,
optionally crops by a sampled perturbation of the projected full-object
box, and records the exact viewpoint label with its bin indices. The
whole run is a pure function of (models, config): identical seeds give
byte-identical images and manifests, regardless of worker count,
because every image owns a stream keyed by (seed, model id, index).
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .modelaug import Mesh
from .paramsampler import (
    CameraKdeSet,
    CropPatternModel,
    derive_rng,
    fit_category_models,
    load_annotations,
    sample_camera,
    sample_crop,
    sample_lighting,
)
from .renderer import RenderConfig, RgbaImage, normalize_mesh, project_full_bbox, rasterize
from .viewgeom import BinLayout, ViewpointTuple, discretize

__all__ = [
    "SynthesisConfig",
    "DatasetManifest",
    "composite",
    "synthesize_dataset",
    "estimate_distributions",
    "load_manifest",
]

_BACKGROUND_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class SynthesisConfig:
    """Knobs for one synthesis run.

    camera_models maps category to its fitted KDE set (None uses the
    parametric fallback for every category); crop_models maps category to
    its crop pattern (None disables cropping). Center offsets for the
    background window are uniform over +-1/4 of each image dimension.
    """

    output_dir: Path
    images_per_model: int = 20
    resolution: tuple[int, int] = (128, 128)
    layout: BinLayout = field(default_factory=BinLayout)
    background_dir: Path | None = None
    camera_models: dict[str, CameraKdeSet] | None = None
    crop_models: dict[str, CropPatternModel] | None = None
    master_seed: int = 0
    jobs: int = 1
    ambient: float = 0.3

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        if self.images_per_model < 1:
            raise ValueError("images_per_model must be at least 1")
        if self.background_dir is not None:
            self.background_dir = Path(self.background_dir)
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass
class DatasetManifest:
    """Provenance and labels for every synthesized image."""

    master_seed: int
    layout: BinLayout
    records: list[dict]

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "layout": {
                "azimuth_bins": self.layout.azimuth_bins,
                "elevation_bins": self.layout.elevation_bins,
                "inplane_bins": self.layout.inplane_bins,
            },
            "records": self.records,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def load_manifest(path: str | Path) -> DatasetManifest:
    doc = json.loads(Path(path).read_text())
    layout = BinLayout(**doc["layout"])
    return DatasetManifest(
        master_seed=doc["master_seed"], layout=layout, records=doc["records"]
    )


def composite(
    foreground: RgbaImage, background: np.ndarray, offset: tuple[int, int] = (0, 0)
) -> np.ndarray:
    """Alpha-blend the render over a background window.

    The background is tiled to cover the output size; offset shifts the
    window relative to center alignment of the two images. Since render
    alpha is binary, blending reduces to exact per-pixel selection:
    out = alpha*fg + (1 - alpha)*bg.
    """
    background = np.asarray(background)
    if background.ndim != 3 or background.shape[2] != 3:
        raise ValueError("background must be an RGB (h, w, 3) array")
    out_h, out_w = foreground.height, foreground.width
    bg_h, bg_w = background.shape[:2]
    start_row = (bg_h - out_h) // 2 + int(offset[1])
    start_col = (bg_w - out_w) // 2 + int(offset[0])
    rows = (start_row + np.arange(out_h)) % bg_h
    cols = (start_col + np.arange(out_w)) % bg_w
    window = background[rows][:, cols]
    alpha = foreground.pixels[:, :, 3:4].astype(np.uint16)
    fg = foreground.pixels[:, :, :3].astype(np.uint16)
    blended = (alpha * fg + (255 - alpha) * window.astype(np.uint16)) // 255
    return blended.astype(np.uint8)


def _list_backgrounds(directory: Path) -> list[Path]:
    files = sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in _BACKGROUND_EXTENSIONS
    )
    if not files:
        raise ValueError(f"no PNG/JPEG backgrounds found in {directory}")
    return files


def _load_background(path: Path) -> np.ndarray | None:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as err:  # corrupt file: caller warns and redraws
        print(f"warning: skipping unreadable background {path}: {err}", file=sys.stderr)
        return None


def _pick_background(corpus: list[Path], rng) -> np.ndarray:
    remaining = list(corpus)
    while remaining:
        index = int(rng.integers(len(remaining)))
        pixels = _load_background(remaining[index])
        if pixels is not None:
            return pixels
        remaining.pop(index)
    raise ValueError("every background in the corpus failed to load")


def _synthesize_one(
    model_id: str,
    category: str,
    mesh: Mesh,
    index: int,
    config: SynthesisConfig,
    corpus: list[Path] | None,
) -> dict:
    rng = derive_rng(config.master_seed, model_id, index)
    width, height = config.resolution
    render_config = RenderConfig(width=width, height=height, ambient=config.ambient)

    camera_model = None
    if config.camera_models is not None:
        if category not in config.camera_models:
            raise KeyError(f"no camera model fitted for category {category!r}")
        camera_model = config.camera_models[category]
    lights = sample_lighting(rng)
    camera = sample_camera(camera_model, rng)
    image, label = rasterize(mesh, camera, lights, render_config)
    full_box = project_full_bbox(mesh, camera, render_config)

    if corpus is not None:
        background = _pick_background(corpus, rng)
        offset = (
            int(rng.integers(-(width // 4), width // 4 + 1)),
            int(rng.integers(-(height // 4), height // 4 + 1)),
        )
    else:
        background = np.zeros((height, width, 3), dtype=np.uint8)
        offset = (0, 0)
    rgb = composite(image, background, offset)

    crop_box = (0, 0, width, height)
    if config.crop_models is not None:
        if category not in config.crop_models:
            raise KeyError(f"no crop model fitted for category {category!r}")
        sampled = sample_crop(
            config.crop_models[category], full_box, (width, height), rng
        )
        # outward pixel rounding, snapping near-integer edges so a
        # concentrated-at-zero crop model reproduces the full box exactly
        crop_box = (
            int(np.floor(sampled[0] + 1e-6)),
            int(np.floor(sampled[1] + 1e-6)),
            int(np.ceil(sampled[2] - 1e-6)),
            int(np.ceil(sampled[3] - 1e-6)),
        )
        crop_box = (
            max(0, crop_box[0]),
            max(0, crop_box[1]),
            min(width, crop_box[2]),
            min(height, crop_box[3]),
        )
        rgb = rgb[crop_box[1] : crop_box[3], crop_box[0] : crop_box[2]]

    filename = f"{model_id}_{index:05d}.png"
    out_path = config.output_dir / filename
    Image.fromarray(rgb).save(out_path)

    bins = discretize(label, config.layout)
    return {
        "image": filename,
        "category": category,
        "model_id": model_id,
        "image_index": index,
        "stream": f"{model_id}:{index}",
        "azimuth_deg": label.azimuth_deg,
        "elevation_deg": label.elevation_deg,
        "inplane_deg": label.inplane_deg,
        "azimuth_bin": bins[0],
        "elevation_bin": bins[1],
        "inplane_bin": bins[2],
        "rho": camera.rho,
        "full_box": list(full_box),
        "crop_box": list(crop_box),
        "source": "synthetic",
    }


def synthesize_dataset(
    models: list[tuple[str, str, Mesh]], config: SynthesisConfig
) -> DatasetManifest:
    """Render images_per_model labeled images for each (id, category, mesh).

    Meshes are normalized first (idempotent). Images are written as PNG
    into config.output_dir and the returned manifest is also saved there
    as manifest.json, with records ordered by (model id, image index) so
    worker scheduling never changes the output.
    """
    if not models:
        raise ValueError("no models to synthesize from")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    corpus = (
        _list_backgrounds(config.background_dir)
        if config.background_dir is not None
        else None
    )
    jobs = []
    for model_id, category, mesh in models:
        normalized = normalize_mesh(mesh)
        for index in range(config.images_per_model):
            jobs.append((model_id, category, normalized, index))

    def run(job):
        model_id, category, mesh, index = job
        return _synthesize_one(model_id, category, mesh, index, config, corpus)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(job) for job in jobs]
    records.sort(key=lambda r: (r["model_id"], r["image_index"]))
    manifest = DatasetManifest(
        master_seed=config.master_seed, layout=config.layout, records=records
    )
    manifest.save(config.output_dir / "manifest.json")
    return manifest


def estimate_distributions(
    annotations_path: str | Path, categories: list[str] | None = None
) -> dict[str, tuple[CameraKdeSet, CropPatternModel]]:
    """Fit per-category camera KDEs and crop models from annotations.

    With an explicit category list, every requested category must have at
    least one record; missing ones are reported together.
    """
    records = load_annotations(annotations_path)
    by_category: dict[str, list[dict]] = {}
    for record in records:
        by_category.setdefault(record["category"], []).append(record)
    if categories is not None:
        missing = sorted(set(categories) - set(by_category))
        if missing:
            raise ValueError(f"no annotation records for categories: {missing}")
        by_category = {c: by_category[c] for c in categories}
    if not by_category:
        raise ValueError("no annotation records found")
    return {
        category: fit_category_models(recs)
        for category, recs in sorted(by_category.items())
    }
