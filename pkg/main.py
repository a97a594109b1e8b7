"""
File name: main.py

Description: Entry point for the spine surface estimation tool. Subcommands
cover the whole workflow: simulate phantom scans, extract aggregated
features, generate ground-truth labels, train and run the spatiotemporal
network, compound predictions into a volume, run the ablation grid, render
overlays and run the end-to-end demo.

Designed to be CLI-invokable and Python-callable.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

import unet
from demo import DEMO_CONFIG, demo_end_to_end
from errors import ConfigError, DimensionError, FileFormatError, SpineSurfError
from evaluation import build_benchmark, load_benchmark, load_grid, load_scan, run_ablation
from features import feature_batch
from geometry import CartesianImage, PolarImage
from helpers import (FEATURE_FILE, FRAME_FILE, LABEL_FILE, PRED_FILE, load_image, read_frames_csv, read_ply,
                     read_scan_meta, save_cartesian, save_polar, write_frames_csv, write_pgm, write_ply,
                     write_scan_meta)
from labelgen import generate_sequence_labels, icp_register
from mesh import BVH, PointCloud, TriangleMesh
from normalization import to_uint8, to_unit_range
from phantom import PhantomSpec, simulate_scan, split_train_test
from runconfig import RunConfig, worker_count
from scan_conversion import CartesianGrid, cartesian_to_polar, polar_to_cartesian
from training import infer_sequence, train
from volume import compound, export_nrrd, extract_surface_points, grid_for_frames

ANNOTATION_POINTS = 400
BMODE_TOP = 180
LABEL_BAND = 40
PRED_BAND = 35


def _debug(args, message: str) -> None:
    if args.verbose:
        print(f"[DEBUG] {message}", file=sys.stderr)


def _load_config(args, extra_files: list | None = None) -> RunConfig:
    return RunConfig.load(args.config, args.set, [f for f in (extra_files or []) if f])


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> None:
    """Simulated frames, labels, the phantom mesh and sampled annotation points."""
    config = _load_config(args, [args.spec, args.plan])
    geo, kin, plan = config.geometry(), config.kinematics(), config.scan_plan()
    spec = PhantomSpec.from_config(config["phantom"], config["labelgen"])
    pixel_size = config.get("geometry", "pixel_size_m")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    print(f"[INFO] Simulating {plan.n_sweeps} sweeps x {plan.frames_per_sweep} frames of a {spec.anatomy} phantom",
          file=sys.stderr)
    scan = simulate_scan(spec, kin, plan, geo, worker_count())
    for record, image, label in zip(scan.frames, scan.images, scan.labels):
        save_cartesian(out / FRAME_FILE.format(record.frame_id), polar_to_cartesian(image, pixel_size), geo)
        save_polar(out / LABEL_FILE.format(record.frame_id), PolarImage(geo, label))
    write_frames_csv(out, scan.frames)
    write_scan_meta(out, geo, kin, pixel_size, spec.anatomy)
    write_ply(out / "phantom.ply", scan.mesh.vertices, scan.mesh.triangles)
    annotations = scan.mesh.sample_surface(ANNOTATION_POINTS, np.random.default_rng(spec.seed))
    write_ply(out / "annotations.ply", annotations.points)
    print(f"[RESULT] {len(scan.frames)} frames saved to: {out}", file=sys.stderr)


def cmd_features(args) -> None:
    """Aggregated feature maps for every frame, plus a JSON run manifest."""
    config = _load_config(args, [args.params])
    source, out = Path(args.input), Path(args.output)
    geo, _, _, _ = read_scan_meta(source)
    frames = read_frames_csv(source)
    images = [load_image(source / FRAME_FILE.format(f.frame_id))[0] for f in frames]
    if not all(isinstance(img, CartesianImage) for img in images):
        raise FileFormatError("Feature extraction expects scan-converted (Cartesian) frames")
    f = config["features"]
    results = feature_batch(images, geo, config.log_gabor(), config.confidence(), f["sobel_threshold"],
                            f["blur_kernel_px"], worker_count(), args.verbose)

    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for record, result in zip(frames, results):
        name = FEATURE_FILE.format(record.frame_id)
        save_cartesian(out / name, result.image, geo)
        entries.append({"frame_id": record.frame_id, "file": name, "solver_residual": result.residual,
                        "solver_iterations": result.iterations})
    manifest = {"geometry": geo.to_dict(), "parameters": config["features"], "frames": entries}
    (out / "features.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"[RESULT] {len(entries)} feature maps saved to: {out}", file=sys.stderr)


def cmd_label(args) -> None:
    """Register annotations to the mesh, then write visibility labels for every frame."""
    config = _load_config(args)
    vertices, faces = read_ply(args.mesh)
    mesh = TriangleMesh(vertices, faces)
    points, _ = read_ply(args.annotations)
    frames_dir, out = Path(args.frames), Path(args.out)
    geo, _, _, _ = read_scan_meta(frames_dir)
    frames = read_frames_csv(frames_dir)
    lg = config["labelgen"]

    bvh = BVH(mesh)
    icp = icp_register(PointCloud(points), bvh, lg["icp_max_iter"], lg["icp_tol"])
    print(f"[INFO] ICP: rmse {icp.rmse_m * 1e3:.4f} mm after {icp.iterations} iterations", file=sys.stderr)
    # The transform takes scan (annotation) coordinates into the mesh frame.
    scan_mesh = mesh.transformed(icp.transform.inverse())
    labels = generate_sequence_labels(scan_mesh, frames, geo, lg["sigma_px"], lg["max_incidence_rad"], worker_count())

    out.mkdir(parents=True, exist_ok=True)
    for record, label in zip(frames, labels):
        save_polar(out / LABEL_FILE.format(record.frame_id), PolarImage(geo, label))
    lines = [
        "pose=" + " ".join(repr(v) for v in icp.transform.row_major()),
        f"rmse_m={icp.rmse_m!r}",
        f"iterations={icp.iterations}",
        f"converged={str(icp.converged).lower()}",
    ]
    (out / "registration.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"[RESULT] {len(labels)} labels saved to: {out}", file=sys.stderr)


def cmd_train(args) -> None:
    config = _load_config(args)
    spec, train_config = config.unet_spec(), config.train_config()
    sequences = []
    for directory in args.frames:
        scan = load_scan(directory, config, args.features, args.labels, worker_count(), args.verbose)
        if args.all_frames:
            ids = [f.frame_id for f in scan.frames]
        else:
            ids, _ = split_train_test(scan.frames, config.get("eval", "train_fraction"), config.get("eval", "split_seed"))
        sequences.append(scan.sequence(ids, spec.in_channels))
        _debug(args, f"{directory}: {len(ids)} training frames")

    result = train(spec, train_config, sequences, verbose=args.verbose)
    manifest = unet.save_params(args.out, spec, result.params)
    print(f"[RESULT] Final training loss {result.loss_trace[-1]:.6f}", file=sys.stderr)
    print(f"[RESULT] Parameters saved to: {args.out} (manifest {manifest})", file=sys.stderr)


def cmd_infer(args) -> None:
    config = _load_config(args)
    spec, params = unet.load_params(args.model)
    scan = load_scan(args.frames, config, args.features, None, worker_count(), args.verbose)
    seq = scan.sequence([f.frame_id for f in scan.frames], spec.in_channels)
    preds = infer_sequence(spec, params, seq.inputs, seq.sweep_ids, config.train_config().reset_policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for record, pred in zip(scan.frames, preds):
        save_polar(out / PRED_FILE.format(record.frame_id), PolarImage(scan.geo, pred))
    print(f"[RESULT] {len(preds)} predictions saved to: {out}", file=sys.stderr)


def _polar_map(path: Path, geo) -> np.ndarray:
    image, _ = load_image(path)
    if isinstance(image, CartesianImage):
        image = cartesian_to_polar(image, geo)
    return np.clip(image.data, 0.0, 1.0)


def cmd_reconstruct(args) -> None:
    config = _load_config(args)
    mode = args.mode or config.get("volume", "mode")
    spacing = config.get("volume", "spacing_m") if args.spacing is None else args.spacing
    threshold = config.get("volume", "threshold") if args.threshold is None else args.threshold
    if not spacing > 0:
        raise ConfigError(f"--spacing must be positive, got {spacing}")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"--threshold must lie in (0, 1), got {threshold}")
    frames_dir, maps_dir = Path(args.frames), Path(args.maps)
    geo, _, _, _ = read_scan_meta(frames_dir)
    frames = read_frames_csv(frames_dir)
    pattern = {"pred": PRED_FILE, "label": LABEL_FILE, "feature": FEATURE_FILE}[args.kind]
    maps = [_polar_map(maps_dir / pattern.format(f.frame_id), geo) for f in frames]

    grid = grid_for_frames(frames, geo, spacing)
    volume = compound(frames, maps, geo, grid, mode, config.get("volume", "splat"), worker_count())
    cloud = extract_surface_points(volume, threshold)
    header, raw = export_nrrd(volume, args.out)
    surface = Path(args.out).parent / "surface.ply"
    write_ply(surface, cloud.points)
    print(f"[RESULT] Volume {volume.dims} saved to: {header} ({raw.name})", file=sys.stderr)
    print(f"[RESULT] {len(cloud)} surface points saved to: {surface}", file=sys.stderr)


def cmd_eval(args) -> None:
    config = _load_config(args)
    grid = load_grid(args.grid)
    if args.data:
        scans = load_benchmark(args.data, config, worker_count(), args.verbose)
    else:
        scans = build_benchmark(config, worker_count(), args.verbose)
    seed = config.get("train", "seed") if args.seed is None else args.seed
    run_ablation(grid, scans, config, seed, args.out, args.export, args.verbose)


def render_overlay(frame: CartesianImage, label: np.ndarray | None = None,
                   pred: np.ndarray | None = None) -> np.ndarray:
    """
    8-bit overlay: B-mode scaled into 0..180, +40 where the label is >= 0.5,
    +35 where the prediction is >= 0.5, saturating at 255. Outside the sector is 0.
    """
    grey = to_uint8(to_unit_range(frame.data), BMODE_TOP).astype(np.int32)
    if label is not None:
        grey += LABEL_BAND * (label >= 0.5)
    if pred is not None:
        grey += PRED_BAND * (pred >= 0.5)
    grey = np.where(frame.mask, grey, 0)
    return np.clip(grey, 0, 255).astype(np.uint8)


def _on_frame_grid(path: str | None, frame: CartesianImage) -> np.ndarray | None:
    if not path:
        return None
    image, _ = load_image(path)
    if isinstance(image, PolarImage):
        image = polar_to_cartesian(image, frame.pixel_size_m, grid=CartesianGrid.of(frame))
    if image.data.shape != frame.data.shape:
        raise DimensionError(f"{path} does not share the frame's pixel grid")
    return image.data


def cmd_render(args) -> None:
    frame, _ = load_image(args.frame)
    if not isinstance(frame, CartesianImage):
        frame = polar_to_cartesian(frame, _load_config(args).get("geometry", "pixel_size_m"))
    grey = render_overlay(frame, _on_frame_grid(args.label, frame), _on_frame_grid(args.pred, frame))
    write_pgm(args.out, grey)
    print(f"[RESULT] Overlay saved to: {args.out}", file=sys.stderr)


def cmd_demo(args) -> None:
    config = RunConfig.load(args.config or DEMO_CONFIG, args.set)
    report = demo_end_to_end(config, args.out, worker_count(), args.verbose)
    print("\n[RESULT] Demo report:\n", file=sys.stderr)
    print(report.to_text(), file=sys.stderr)


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig INI file (default: $SPINESURF_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value; repeatable")
    common.add_argument("--verbose", action="store_true", help="Print debug diagnostics")

    parser = argparse.ArgumentParser(prog="spinesurf", description="Spine surface estimation from phased-array ultrasound sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate a phantom scan")
    p.add_argument("--spec", help="INI file with [phantom] settings")
    p.add_argument("--plan", help="INI file with scan plan settings")
    p.add_argument("--out", required=True, help="Output frame directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", parents=[common], help="Extract aggregated feature maps")
    p.add_argument("--input", required=True, help="Frame directory")
    p.add_argument("--output", required=True, help="Output directory for feature maps")
    p.add_argument("--params", help="INI file with [features] settings")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("label", parents=[common], help="Generate ground-truth labels from a mesh")
    p.add_argument("--mesh", required=True, help="Surface mesh (PLY)")
    p.add_argument("--frames", required=True, help="Frame directory")
    p.add_argument("--annotations", required=True, help="Annotated surface points (PLY)")
    p.add_argument("--out", required=True, help="Output directory for labels")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], help="Train the network")
    p.add_argument("--frames", required=True, nargs="+", help="One or more frame directories")
    p.add_argument("--features", help="Directory of feature maps (default: next to the frames)")
    p.add_argument("--labels", help="Directory of labels (default: next to the frames)")
    p.add_argument("--all-frames", action="store_true", help="Train on every frame instead of the train sweeps")
    p.add_argument("--out", required=True, help="Parameter file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="Predict surface maps for a frame sequence")
    p.add_argument("--frames", required=True, help="Frame directory")
    p.add_argument("--features", help="Directory of feature maps (default: next to the frames)")
    p.add_argument("--model", required=True, help="Parameter file from `train`")
    p.add_argument("--out", required=True, help="Output directory for predictions")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("reconstruct", parents=[common], help="Compound per-frame maps into a volume")
    p.add_argument("--frames", required=True, help="Frame directory")
    p.add_argument("--maps", required=True, help="Directory of per-frame maps")
    p.add_argument("--kind", choices=["pred", "label", "feature"], default="pred", help="Which maps to compound")
    p.add_argument("--mode", choices=["max", "mean"], help="Compounding mode")
    p.add_argument("--spacing", type=float, help="Voxel spacing in metres")
    p.add_argument("--threshold", type=float, help="Surface threshold for surface.ply")
    p.add_argument("--out", required=True, help="NRRD header to write")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", parents=[common], help="Run the ablation grid")
    p.add_argument("--grid", help="INI file of experiments (default: the six ablation experiments)")
    p.add_argument("--data", help="Frame directory or directory of frame directories (default: simulate)")
    p.add_argument("--out", default="results.csv", help="Result CSV")
    p.add_argument("--export", help="Also export the table to this Excel file")
    p.add_argument("--seed", type=int, help="Initialization seed (default: [train] seed)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="Render a frame with label/prediction overlay")
    p.add_argument("--frame", required=True, help="B-mode frame (PFM)")
    p.add_argument("--label", help="Label map (PFM)")
    p.add_argument("--pred", help="Prediction map (PFM)")
    p.add_argument("--out", required=True, help="PGM file to write")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("demo", parents=[common], help="Run the end-to-end demo")
    p.add_argument("--out", help="Directory for report.txt, volume.nrrd and surface.ply")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Parse arguments and dispatch to the subcommand.

    Args:
        argv (list[str], optional): Arguments without the program name; sys.argv by default.

    Returns:
        int: 0 on success, 1 on domain or input errors, 2 on usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        args.func(args)
    except (SpineSurfError, FileNotFoundError, ValueError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
