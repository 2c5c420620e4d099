"""Command-line surface binding all pipeline stages.

Subcommands: gen, train, codebook, estimate, eval-pose, eval-detect,
gt-offset, bench. Exit codes: 0 success, 1 usage error, 2 data error.
Outputs are deterministic for a fixed (config, seed); wall-clock timings go
to a separate timing log so result files stay byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .codebook import build_codebook, load_codebook, save_codebook
from .config import PipelineConfig, load_config
from .dataset import generate_synthetic_scenes, load_dataset, make_backgrounds
from .geom import pose_to_json, sample_view_rotations
from .mesh import MeshParseError, load_mesh
from .metrics import bundle_offset, mean_average_precision, mean_pose, save_report
from .pipeline import bench_stages, evaluate_estimates, run_pipeline
from .render import render_view_crop
from .train import load_checkpoint, save_checkpoint, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sixdpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("gen", "generate synthetic scenes with exact ground truth")
    p.add_argument("--count", type=int, default=None, help="number of frames (default from config)")

    p = add("train", "train the autoencoder for one or all objects")
    p.add_argument("--object", default=None, help="object id (default: every configured object)")

    p = add("codebook", "build the view codebook for one or all objects")
    p.add_argument("--object", default=None)
    p.add_argument("--models", required=True, help="directory with encoder_<id>.bin checkpoints")

    p = add("estimate", "run detection + pose estimation over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--models", required=True, help="directory with encoder/codebook files")
    p.add_argument("--detections", choices=("gt", "file", "naive"), default="gt")
    p.add_argument("--no-ray-correction", action="store_true")

    p = add("eval-pose", "score pose estimates against ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimates", required=True, help="estimates.json from the estimate step")
    p.add_argument("--offsets", default=None, help="bundle offset file for bundle-derived GT")

    p = add("eval-detect", "mAP of stored detections against ground-truth boxes")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("gt-offset", help="calibrate the object-to-bundle offset from frames")
    p.add_argument("--dataset", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--out", required=True, help="offset JSON path")

    p = add("bench", "latency percentiles for encode / lookup / end to end")
    p.add_argument("--object", default=None)
    p.add_argument("--models", required=True)
    p.add_argument("--iterations", type=int, default=20)

    return parser


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_mesh(config_path: Path, mesh_entry: str):
    mesh_path = Path(mesh_entry)
    if not mesh_path.is_absolute():
        mesh_path = config_path.parent / mesh_path
    if not mesh_path.exists():
        raise FileNotFoundError(f"mesh file not found: {mesh_path}")
    return load_mesh(mesh_path)


def _object_ids(config: PipelineConfig, requested: str | None) -> list[str]:
    if requested is not None:
        if requested not in config.objects:
            raise KeyError(f"object {requested!r} not in config (have {sorted(config.objects)})")
        return [requested]
    if not config.objects:
        raise ValueError("config declares no objects")
    return sorted(config.objects)


def _training_views(config, obj_id, mesh):
    obj = config.objects[obj_id]
    grid = sample_view_rotations(obj.n_views, obj.inplane_steps)
    crop_size = obj.train.crop_size
    views = []
    for rot in grid.rotations:
        crop, mask, _bbox, _diag = render_view_crop(
            mesh, rot, config.camera, obj.render_distance, obj.pad_factor, crop_size
        )
        views.append((crop.astype(np.float32), mask))
    return grid, views


def _cmd_gen(args) -> int:
    config = load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    meshes = {
        obj_id: _resolve_mesh(Path(args.config), obj.mesh)
        for obj_id, obj in config.objects.items()
    }
    count = args.count if args.count is not None else config.gen.frames
    generate_synthetic_scenes(
        args.out,
        meshes,
        config.camera,
        count=count,
        seed=seed,
        depth_range=config.gen.depth_range_mm,
        scenes=config.gen.scenes,
        n_backgrounds=config.gen.n_backgrounds,
        occluder_probability=config.gen.occluder_probability,
    )
    print(f"wrote {count} frames to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for obj_id in _object_ids(config, args.object):
        obj = config.objects[obj_id]
        mesh = _resolve_mesh(Path(args.config), obj.mesh)
        _grid, views = _training_views(config, obj_id, mesh)
        train_cfg = obj.train
        if args.seed is not None:
            train_cfg = type(train_cfg).from_json({**train_cfg.to_json(), "seed": args.seed})
        backgrounds = make_backgrounds(
            16, 4 * train_cfg.crop_size, 4 * train_cfg.crop_size, seed=train_cfg.seed + 1
        )
        params, curve = train(train_cfg, views, obj.augment, backgrounds, progress_every=100)
        ckpt = out / f"encoder_{obj_id}.bin"
        save_checkpoint(ckpt, params, train_cfg)
        _write_json(out / f"loss_{obj_id}.json", {"loss": curve})
        print(f"{obj_id}: trained {train_cfg.iterations} iterations, "
              f"final loss {curve[-1] if curve else float('nan'):.3f} -> {ckpt}")
    return 0


def _cmd_codebook(args) -> int:
    config = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for obj_id in _object_ids(config, args.object):
        obj = config.objects[obj_id]
        mesh = _resolve_mesh(Path(args.config), obj.mesh)
        ckpt = Path(args.models) / f"encoder_{obj_id}.bin"
        if not ckpt.exists():
            raise FileNotFoundError(f"encoder checkpoint not found: {ckpt}")
        params, _ = load_checkpoint(ckpt)
        grid = sample_view_rotations(obj.n_views, obj.inplane_steps)
        cb = build_codebook(
            mesh,
            params.astype(np.float32),
            grid,
            config.camera,
            obj.render_distance,
            object_id=obj_id,
            pad_factor=obj.pad_factor,
        )
        path = out / f"codebook_{obj_id}.bin"
        save_codebook(path, cb)
        print(f"{obj_id}: codebook with {len(cb)} views -> {path}")
    return 0


def _load_models(config: PipelineConfig, models_dir: str):
    encoders, codebooks = {}, {}
    for obj_id in sorted(config.objects):
        ckpt = Path(models_dir) / f"encoder_{obj_id}.bin"
        cb_path = Path(models_dir) / f"codebook_{obj_id}.bin"
        if not ckpt.exists():
            raise FileNotFoundError(f"encoder checkpoint not found: {ckpt}")
        if not cb_path.exists():
            raise FileNotFoundError(f"codebook file not found: {cb_path}")
        params, _ = load_checkpoint(ckpt)
        encoders[obj_id] = params.astype(np.float32)
        codebooks[obj_id] = load_codebook(cb_path)
    return encoders, codebooks


def _cmd_estimate(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(args.dataset)
    encoders, codebooks = _load_models(config, args.models)
    records, times = run_pipeline(
        dataset,
        encoders,
        codebooks,
        detection_source=args.detections,
        apply_ray_correction=not args.no_ray_correction,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "estimates.json", {"records": records})
    with open(out / "timing.log", "w", encoding="utf-8") as fh:
        json.dump(times.percentiles(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"estimated {sum(1 for r in records if 'pose' in r)} poses "
          f"({sum(1 for r in records if 'error' in r)} errors) -> {out / 'estimates.json'}")
    return 0


def _cmd_eval_pose(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(args.dataset)
    with open(args.estimates, "r", encoding="utf-8") as fh:
        estimates = json.load(fh)["records"]
    offsets = None
    if args.offsets:
        from .geom import pose_from_json

        with open(args.offsets, "r", encoding="utf-8") as fh:
            offsets = {k: pose_from_json(v) for k, v in json.load(fh).items()}
    report = evaluate_estimates(
        dataset,
        estimates,
        k_thresholds=config.eval.adi_k,
        cou_thresholds=config.eval.cou_theta,
        bundle_offsets=offsets,
    )
    json_path, text_path = save_report(report, args.out)
    print(f"report -> {json_path}, {text_path}")
    return 0


def _cmd_eval_detect(args) -> int:
    config = load_config(args.config)
    dataset = load_dataset(args.dataset)
    dets, gts = [], []
    for frame in dataset.frames:
        gts.extend(frame.gts)
        if frame.detections:
            dets.extend(frame.detections)
    score = mean_average_precision(dets, gts, config.eval.map_iou)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "detect_report.json",
        {
            "map": score,
            "iou_thresholds": list(config.eval.map_iou),
            "n_detections": len(dets),
            "n_ground_truth": len(gts),
        },
    )
    print(f"mAP {score:.4f} -> {out / 'detect_report.json'}")
    return 0


def _cmd_gt_offset(args) -> int:
    dataset = load_dataset(args.dataset)
    offsets = []
    for frame in dataset.frames:
        if frame.bundle_pose is None:
            continue
        for gt in frame.gts:
            if gt.class_id == args.object and gt.pose is not None:
                offsets.append(bundle_offset(gt.pose, frame.bundle_pose))
    if not offsets:
        raise ValueError(
            f"no calibration frames with both a {args.object!r} pose and a bundle pose"
        )
    mean = mean_pose(offsets)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {args.object: pose_to_json(mean)})
    print(f"offset from {len(offsets)} frames -> {out}")
    return 0


def _cmd_bench(args) -> int:
    config = load_config(args.config)
    encoders, codebooks = _load_models(config, args.models)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for obj_id in _object_ids(config, args.object):
        obj = config.objects[obj_id]
        mesh = _resolve_mesh(Path(args.config), obj.mesh)
        grid = sample_view_rotations(obj.n_views, obj.inplane_steps)
        from .geom import PoseSE3
        from .render import render

        pose = PoseSE3(grid.rotations[0], np.array([0.0, 0.0, obj.render_distance]))
        frame = render(mesh, pose, config.camera)
        results[obj_id] = bench_stages(
            encoders[obj_id], codebooks[obj_id], frame.color, frame.bbox,
            config.camera, iterations=args.iterations,
        )
    with open(out / "bench.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"bench -> {out / 'bench.json'}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "codebook": _cmd_codebook,
    "estimate": _cmd_estimate,
    "eval-pose": _cmd_eval_pose,
    "eval-detect": _cmd_eval_detect,
    "gt-offset": _cmd_gt_offset,
    "bench": _cmd_bench,
}


def cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help paths
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, MeshParseError, ValueError, KeyError, RuntimeError,
            json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
