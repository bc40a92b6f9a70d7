"""Command-line interface wiring the pipeline together.

Subcommands: fit-dist, deform, synth, train, eval. Global flags:
--workspace (root against which relative paths resolve), --seed, and
--jobs. Progress goes to standard error; machine-readable output goes to
files only. Exit codes: 0 success, 1 input error, 2 internal error.
All commands are deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import evalkit, modelaug, paramsampler, synthpipe, toytrainer
from .viewgeom import BinLayout, ViewpointTuple

__all__ = ["main"]


class UserError(Exception):
    """Invalid input; reported without a traceback, exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve(workspace: Path, path: str | Path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else workspace / path


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise UserError(f"{path}: file not found") from None
    except json.JSONDecodeError as err:
        raise UserError(f"{path}: invalid JSON ({err})") from None


def _expect(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise UserError(f"{field}: {message}")


# --- fit-dist ------------------------------------------------------------------


def cmd_fit_dist(args, workspace: Path, seed: int, jobs: int) -> None:
    annotations = _resolve(workspace, args.annotations)
    out = _resolve(workspace, args.out)
    try:
        models = synthpipe.estimate_distributions(annotations)
    except FileNotFoundError:
        raise UserError(f"{annotations}: file not found") from None
    except ValueError as err:
        raise UserError(str(err)) from None
    doc = paramsampler.serialize_models(models)
    doc["master_seed"] = seed
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1, sort_keys=True))
    for category, (camera, _) in sorted(models.items()):
        _log(f"{category}: {camera.rho.samples.size} records")
    _log(f"wrote {out}")


# --- deform --------------------------------------------------------------------


def cmd_deform(args, workspace: Path, seed: int, jobs: int) -> None:
    model_path = _resolve(workspace, args.model)
    out_dir = _resolve(workspace, args.out_dir)
    try:
        mesh = modelaug.load_obj(model_path)
    except FileNotFoundError:
        raise UserError(f"{model_path}: file not found") from None
    except ValueError as err:
        raise UserError(f"{model_path}: {err}") from None
    if args.stddev is None:
        lo, hi = mesh.bounding_box()
        args.stddev = 0.03 * float(np.linalg.norm(hi - lo))
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = model_path.stem
    failures = 0
    for k in range(args.count):
        out_path = out_dir / f"{stem}_deform{k:04d}.obj"
        try:
            lattice = modelaug.build_lattice(mesh, args.resolution)
            rng = paramsampler.derive_rng(seed, "deform", stem, k)
            field = modelaug.sample_deformation(lattice, args.stddev, rng)
            deformed = modelaug.apply_deformation(mesh, lattice, field)
            modelaug.save_obj(deformed, out_path)
            error = modelaug.symmetry_error(deformed)
            _log(f"{out_path.name}: symmetry error {error:.3e}")
        except ValueError as err:
            failures += 1
            _log(f"{out_path.name}: FAILED ({err})")
    if failures:
        raise UserError(f"{failures} of {args.count} deformations failed")


# --- synth ---------------------------------------------------------------------


def _load_synth_config(path: Path, workspace: Path, seed: int, jobs: int):
    doc = _read_json(path)
    _expect(isinstance(doc, dict), "config", "must be a JSON object")
    _expect("output_dir" in doc, "output_dir", "is required")
    _expect(
        isinstance(doc.get("models"), list) and doc["models"],
        "models",
        "must be a nonempty list",
    )
    models = []
    for k, entry in enumerate(doc["models"]):
        for field in ("id", "category", "path"):
            _expect(field in entry, f"models[{k}].{field}", "is required")
        mesh_path = _resolve(workspace, entry["path"])
        _expect(mesh_path.exists(), f"models[{k}].path", f"{mesh_path} not found")
        models.append((entry["id"], entry["category"], modelaug.load_obj(mesh_path)))

    resolution = doc.get("resolution", [128, 128])
    _expect(
        isinstance(resolution, list) and len(resolution) == 2,
        "resolution",
        "must be [width, height]",
    )
    layout_doc = doc.get("layout", {})
    try:
        layout = BinLayout(**layout_doc) if layout_doc else BinLayout()
    except (TypeError, ValueError) as err:
        raise UserError(f"layout: {err}") from None

    background_dir = doc.get("background_dir")
    if background_dir is not None:
        background_dir = _resolve(workspace, background_dir)
        _expect(background_dir.is_dir(), "background_dir", f"{background_dir} is not a directory")

    camera_models = None
    crop_models = None
    if doc.get("distributions"):
        dist_path = _resolve(workspace, doc["distributions"])
        _expect(dist_path.exists(), "distributions", f"{dist_path} not found")
        fitted = paramsampler.deserialize_models(_read_json(dist_path))
        if doc.get("use_camera_distributions", True):
            camera_models = {c: camera for c, (camera, _) in fitted.items()}
        if doc.get("use_crop_model", True):
            crop_models = {c: crop for c, (_, crop) in fitted.items()}

    images_per_model = doc.get("images_per_model", 20)
    _expect(
        isinstance(images_per_model, int) and images_per_model >= 1,
        "images_per_model",
        "must be a positive integer",
    )
    master_seed = doc.get("master_seed", seed)
    config = synthpipe.SynthesisConfig(
        output_dir=_resolve(workspace, doc["output_dir"]),
        images_per_model=images_per_model,
        resolution=(int(resolution[0]), int(resolution[1])),
        layout=layout,
        background_dir=background_dir,
        camera_models=camera_models,
        crop_models=crop_models,
        master_seed=int(master_seed),
        jobs=jobs,
    )
    return models, config


def cmd_synth(args, workspace: Path, seed: int, jobs: int) -> None:
    config_path = _resolve(workspace, args.config)
    models, config = _load_synth_config(config_path, workspace, seed, jobs)
    started = time.perf_counter()
    try:
        manifest = synthpipe.synthesize_dataset(models, config)
    except (KeyError, ValueError) as err:
        raise UserError(str(err)) from None
    elapsed = time.perf_counter() - started
    by_category: dict[str, int] = {}
    for record in manifest.records:
        by_category[record["category"]] = by_category.get(record["category"], 0) + 1
    _log(f"synthesized {len(manifest.records)} images in {elapsed:.1f}s")
    for category, count in sorted(by_category.items()):
        _log(f"  {category}: {count}")
    _log(f"manifest: {config.output_dir / 'manifest.json'}")


# --- train ---------------------------------------------------------------------


def cmd_train(args, workspace: Path, seed: int, jobs: int) -> None:
    manifest_path = _resolve(workspace, args.manifest)
    config_doc = _read_json(_resolve(workspace, args.config))
    out_model = _resolve(workspace, args.out_model)
    try:
        manifest = synthpipe.load_manifest(manifest_path)
    except FileNotFoundError:
        raise UserError(f"{manifest_path}: file not found") from None
    categories = sorted({r["category"] for r in manifest.records})
    _expect(bool(categories), "manifest", "contains no records")
    try:
        train_config = toytrainer.TrainConfig(
            learning_rate=config_doc.get("learning_rate", 0.05),
            epochs=config_doc.get("epochs", 30),
            batch_size=config_doc.get("batch_size", 32),
            seed=config_doc.get("seed", seed),
            sigma=config_doc.get("sigma", 1.0),
            layout=manifest.layout,
            source_weights=config_doc.get("source_weights", {}),
        )
    except ValueError as err:
        raise UserError(f"train config: {err}") from None
    model = toytrainer.ToyModel.create(
        manifest.layout,
        categories,
        input_size=config_doc.get("input_size", 32),
        hidden=config_doc.get("hidden", 64),
        seed=train_config.seed,
    )
    try:
        history = toytrainer.train(model, manifest, train_config, manifest_path.parent)
    except (FileNotFoundError, ValueError) as err:
        raise UserError(str(err)) from None
    out_model.parent.mkdir(parents=True, exist_ok=True)
    toytrainer.save_model(model, out_model)
    history_path = (
        _resolve(workspace, args.history)
        if args.history
        else out_model.with_suffix(".history.csv")
    )
    with history_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, f"{loss:.10g}"])
    _log(f"trained {len(categories)} head(s) for {train_config.epochs} epochs")
    _log(f"loss {history[0]:.4f} -> {history[-1]:.4f}")
    _log(f"model: {out_model}")


# --- eval ----------------------------------------------------------------------

_DETECTION_FIELDS = ("image_id", "category", "bbox", "score")
_GT_FIELDS = ("image_id", "category", "bbox")
_ANGLE_FIELDS = ("azimuth_deg", "elevation_deg", "inplane_deg")


def _load_records(path: Path, kind: str):
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise UserError(f"{path}: file not found") from None
    records = []
    required = _DETECTION_FIELDS if kind == "detection" else _GT_FIELDS
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as err:
            raise UserError(f"{path}:{lineno}: invalid JSON ({err})") from None
        for field in (*required, *_ANGLE_FIELDS):
            _expect(field in doc, f"{path}:{lineno}: {field}", "is required")
        _expect(
            isinstance(doc["bbox"], list) and len(doc["bbox"]) == 4,
            f"{path}:{lineno}: bbox",
            "must be [l, t, r, b]",
        )
        try:
            viewpoint = ViewpointTuple(
                doc["azimuth_deg"], doc["elevation_deg"], doc["inplane_deg"]
            )
            if kind == "detection":
                records.append(
                    evalkit.DetectionRecord(
                        image_id=str(doc["image_id"]),
                        bbox=tuple(doc["bbox"]),
                        score=float(doc["score"]),
                        viewpoint=viewpoint,
                        category=str(doc["category"]),
                        azimuth_probs=doc.get("azimuth_probs"),
                    )
                )
            else:
                records.append(
                    evalkit.GroundTruthRecord(
                        image_id=str(doc["image_id"]),
                        bbox=tuple(doc["bbox"]),
                        viewpoint=viewpoint,
                        category=str(doc["category"]),
                        difficult=bool(doc.get("difficult", False)),
                    )
                )
        except ValueError as err:
            raise UserError(f"{path}:{lineno}: {err}") from None
    return records


def _format_value(value) -> str:
    return "-" if value is None else f"{value:.3f}"


def _report_table(report: evalkit.EvalReport) -> str:
    categories = sorted(report.categories)
    rows = [
        ("AP", "ap"),
        ("AVP-4V", "avp_4"),
        ("AVP-8V", "avp_8"),
        ("AVP-16V", "avp_16"),
        ("AVP-24V", "avp_24"),
        ("Acc(pi/6)", "acc_pi6"),
        ("MedErr(deg)", "mederr_deg"),
        ("MedAzErr(deg)", "median_azimuth_error_deg"),
        ("16V-tol", "tol_16v"),
    ]
    width = max(12, *(len(c) for c in categories)) if categories else 12
    header = "metric".ljust(14) + "".join(c.rjust(width + 2) for c in categories)
    header += "Avg.".rjust(width + 2)
    lines = [header]
    for label, key in rows:
        cells = [
            _format_value(report.categories[c].get(key)).rjust(width + 2)
            for c in categories
        ]
        cells.append(_format_value(report.means.get(key)).rjust(width + 2))
        lines.append(label.ljust(14) + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_eval(args, workspace: Path, seed: int, jobs: int) -> None:
    detections = _load_records(_resolve(workspace, args.detections), "detection")
    groundtruths = _load_records(_resolve(workspace, args.groundtruth), "groundtruth")
    report = evalkit.build_report(
        detections, groundtruths, eleven_point=args.eleven_point
    )
    out_report = _resolve(workspace, args.report)
    out_report.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["master_seed"] = seed
    out_report.write_text(json.dumps(doc, indent=1, sort_keys=True))
    table = _report_table(report)
    table_path = _resolve(workspace, args.table) if args.table else None
    if table_path:
        table_path.write_text(table)
    if args.curves:
        curves_path = _resolve(workspace, args.curves)
        with curves_path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["category", "delta_deg", "fraction"])
            for category in sorted(report.categories):
                curve = report.categories[category].get("accuracy_curve")
                for delta, fraction in curve or []:
                    writer.writerow([category, delta, fraction])
    _log(table)
    _log(f"report: {out_report}")


# --- entry point ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="viewsynth", description=__doc__)
    parser.add_argument("--workspace", default=".", help="root for relative paths")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument(
        "--jobs",
        type=int,
        default=os.cpu_count() or 1,
        help="worker count (default: available parallelism; never affects outputs)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-dist", help="fit camera/crop distributions from annotations")
    p.add_argument("annotations", help="JSON-lines annotation file")
    p.add_argument("out", help="output distribution JSON")
    p.set_defaults(func=cmd_fit_dist)

    p = sub.add_parser("deform", help="generate deformed variants of a mesh")
    p.add_argument("model", help="seed OBJ file")
    p.add_argument("out_dir", help="output directory")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--stddev", type=float, default=None,
                   help="control translation stddev (default 3%% of bbox diagonal)")
    p.add_argument("--resolution", type=int, default=4, help="lattice points per axis")
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("synth", help="synthesize a labeled dataset")
    p.add_argument("config", help="synthesis config JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the miniature viewpoint classifier")
    p.add_argument("manifest", help="dataset manifest JSON")
    p.add_argument("config", help="training config JSON")
    p.add_argument("out_model", help="output model JSON")
    p.add_argument("--history", default=None, help="loss history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("detections", help="detections JSON-lines")
    p.add_argument("groundtruth", help="ground-truth JSON-lines")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--table", default=None, help="output text table")
    p.add_argument("--curves", default=None, help="output accuracy-curve CSV")
    p.add_argument("--eleven-point", action="store_true",
                   help="11-point AP interpolation instead of all-points")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        workspace = Path(args.workspace)
        if not workspace.is_dir():
            raise UserError(f"workspace {workspace} is not a directory")
        args.func(args, workspace, args.seed, args.jobs)
        return 0
    except UserError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
