"""Command line for simulating, training, rendering and evaluating Gaussian ultrasound fields.

Subcommands: phantom, train, render, eval, compound, reslice, grad-check and the two
ablation harnesses.

Exit status: 0 on success, 2 on usage errors, 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import logging
import subprocess
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .errors import UltraGRayError

log = logging.getLogger("ultragray")


def version_string() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir, args, argv, config=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"version = {version_string()}", f"command = {args.command}", f"seed = {args.seed}",
             f"threads = {args.threads}", "argv = " + " ".join(argv)]
    if config is not None:
        lines.append("[config]")
        lines.append(config.as_text().rstrip())
    path = out / "run_manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args):
    from .train import TrainConfig, apply_overrides, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "iters", None):
        cfg = cfg.replace(total_iters=args.iters)
    return apply_overrides(cfg, args.set or [])


def _load_scene_or_train(args, cfg, train_data, eval_data=None):
    from .scene import load_scene
    from .train import train

    if getattr(args, "scene", None):
        return load_scene(args.scene)
    field, _ = train(train_data, cfg, seed=args.seed, eval_dataset=eval_data)
    return field


def _render_frames(field, dataset, cfg=None):
    from .render import RenderOptions, render

    opts = RenderOptions(attenuation=cfg.attenuation if cfg else True, sh_degree=cfg.sh_degree_max if cfg else 1)
    return [render(field, dataset.geometry, pose, opts).bmode for pose in dataset.poses]


def _summary_csv(path, rows, key_name):
    """Rows of ``(key, MetricReport)``, one mean±std cell per metric."""
    from .metrics import METRIC_NAMES

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key_name] + list(METRIC_NAMES))
        for key, report in rows:
            row = report.summary_row()
            w.writerow([key] + [row[m] for m in METRIC_NAMES])


# --------------------------------------------------------------------------- commands


def cmd_phantom(args, argv):
    from .dataio import builtin_phantom, load_phantom_spec, phantom_datasets, save_dataset

    spec = builtin_phantom(args.spec) if not Path(args.spec).exists() else load_phantom_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    train_ds, eval_ds = phantom_datasets(spec, tilts=args.tilts, eval_tilts=args.eval_tilts, frames=args.frames)
    save_dataset(train_ds, args.out)
    write_manifest(args.out, args, argv)
    if args.eval_out and eval_ds is not None:
        save_dataset(eval_ds, args.eval_out)
        write_manifest(args.eval_out, args, argv)
    print(f"wrote {len(train_ds)} frames to {args.out}" + (f", {len(eval_ds)} to {args.eval_out}" if args.eval_out else ""))


def cmd_train(args, argv):
    from .dataio import load_dataset
    from .scene import load_scene, save_scene
    from .train import train

    cfg = _config(args)
    data = load_dataset(args.data)
    eval_data = load_dataset(args.eval_data) if args.eval_data else None
    out = Path(args.out)
    write_manifest(out, args, argv, cfg)
    init = load_scene(args.init) if args.init else None
    field, telemetry = train(data, cfg, seed=args.seed, eval_dataset=eval_data, field=init,
                             checkpoint_dir=out / "checkpoints")
    save_scene(field, out / "scene.ugs")
    telemetry.write_csv(out / "telemetry.csv")
    with open(out / "refinements.csv", "w") as fh:
        fh.write("iteration,before,pruned,duplicated,split,after\n")
        for r in telemetry.refinements:
            fh.write(f"{r.iteration},{r.before},{r.pruned},{r.duplicated},{r.split},{r.after}\n")
    print(f"trained {cfg.total_iters} iterations, {len(field)} gaussians -> {out / 'scene.ugs'}")


def cmd_render(args, argv):
    from .dataio import load_dataset, write_float_image, write_pgm
    from .render import RenderOptions, render
    from .scene import load_scene

    field = load_scene(args.scene)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, args, argv)
    opts = RenderOptions(attenuation=not args.no_attenuation)
    for i, pose in enumerate(data.poses):
        r = render(field, data.geometry, pose, opts)
        write_pgm(out / f"bmode_{i:04d}.pgm", r.bmode)
        if args.float:
            write_float_image(out / f"bmode_{i:04d}.raw", r.bmode)
        if args.maps:
            write_pgm(out / f"echo_{i:04d}.pgm", np.clip(r.echo, 0, 1))
            write_pgm(out / f"transmittance_{i:04d}.pgm", r.transmittance)
            if args.float:
                write_float_image(out / f"echo_{i:04d}.raw", r.echo)
                write_float_image(out / f"transmittance_{i:04d}.raw", r.transmittance)
    print(f"rendered {len(data)} frames to {out}")


def _eval_frames_csv(path, names, report):
    from .metrics import METRIC_NAMES

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame"] + list(METRIC_NAMES))
        for name, vals in zip(names, report.frames):
            w.writerow([name] + [f"{vals[m]:.6f}" for m in METRIC_NAMES])
        row = report.summary_row()
        w.writerow(["mean±std"] + [row[m] for m in METRIC_NAMES])


def cmd_eval(args, argv):
    from .dataio import load_dataset
    from .metrics import evaluate
    from .scene import load_scene

    field = load_scene(args.scene)
    data = load_dataset(args.data)
    report = evaluate(_render_frames(field, data), data.images)
    out = Path(args.out)
    write_manifest(out.parent, args, argv)
    _eval_frames_csv(out, data.names, report)
    print(" ".join(f"{k}={v}" for k, v in report.summary_row().items()))


def cmd_compound(args, argv):
    from .baseline import compound, save_volume
    from .dataio import load_dataset

    data = load_dataset(args.data)
    vol = compound(data.frames, data.geometry, args.mode, args.spacing)
    out = Path(args.out)
    write_manifest(out.parent, args, argv)
    save_volume(vol, out)
    print(f"volume {vol.dims} at {vol.spacing} mm -> {out}")


def cmd_reslice(args, argv):
    from .baseline import load_volume, reslice
    from .dataio import load_dataset, write_pgm
    from .metrics import evaluate

    vol = load_volume(args.volume)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, args, argv)
    images = [reslice(vol, data.geometry, pose) for pose in data.poses]
    for i, img in enumerate(images):
        write_pgm(out / f"reslice_{i:04d}.pgm", img)
    report = evaluate(images, data.images)
    _eval_frames_csv(out / "metrics.csv", data.names, report)
    print(" ".join(f"{k}={v}" for k, v in report.summary_row().items()))


def cmd_grad_check(args, argv):
    from .grad import grad_check, random_check_scene
    from .probe import Pose, ProbeGeometry

    geometry = ProbeGeometry(args.size * 0.375, args.size * 0.375, args.size, args.size)
    ok = True
    for n in args.counts:
        for seed in range(args.seed, args.seed + args.repeats):
            field = random_check_scene(n, seed)
            report = grad_check(field, geometry, Pose.identity(), tolerance=args.tolerance, seed=seed)
            print(f"# N={n} seed={seed}")
            print("\n".join(report.lines()))
            ok &= report.passed
    return 0 if ok else 1


def cmd_ablate_angles(args, argv):
    from .dataio import load_dataset
    from .metrics import evaluate

    cfg = _config(args)
    train_data = load_dataset(args.data)
    eval_all = load_dataset(args.eval_data)
    field = _load_scene_or_train(args, cfg, train_data)
    rows = []
    for tilt in args.tilts:
        sub = eval_all.select_tilts([tilt])
        if len(sub) == 0:
            raise UltraGRayError(f"no evaluation frames at tilt {tilt}")
        rows.append((tilt, evaluate(_render_frames(field, sub, cfg), sub.images)))
    out = Path(args.out)
    write_manifest(out.parent, args, argv, cfg)
    _summary_csv(out, rows, "tilt_deg")
    print(out.read_text(), end="")


def cmd_ablate_count(args, argv):
    from .dataio import load_dataset
    from .metrics import evaluate
    from .train import train

    cfg = _config(args)
    train_data = load_dataset(args.data)
    eval_data = load_dataset(args.eval_data) if args.eval_data else train_data
    rows = []
    for cap in args.caps:
        field, _ = train(train_data, cfg.replace(n_max=cap), seed=args.seed)
        rows.append((cap, evaluate(_render_frames(field, eval_data, cfg), eval_data.images)))
    out = Path(args.out)
    write_manifest(out.parent, args, argv, cfg)
    _summary_csv(out, rows, "n_max")
    print(out.read_text(), end="")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    def common_flags(seed_default=0, seed_help="root seed for every random stream (default 0)"):
        # a fresh parent per subcommand: argparse shares parent actions, so defaults would leak
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--seed", type=int, default=seed_default, help=seed_help)
        common.add_argument("--threads", type=int, default=None,
                            help="worker threads for the kernels (default: all available)")
        common.add_argument("-v", "--verbose", action="store_true", help="log progress")
        return common

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", help="key = value training config file")
    cfg.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    cfg.add_argument("--iters", type=int, help="shorthand for --set total_iters=N")

    p = argparse.ArgumentParser(prog="ultragray", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", parents=[common_flags(None, "phantom seed (default: the one in the spec)")],
                       help="simulate a phantom sweep dataset")
    s.add_argument("--spec", required=True, help="phantom TOML file or builtin name (shadow, layered, speckle)")
    s.add_argument("--out", required=True, help="output dataset directory (training sweeps)")
    s.add_argument("--eval-out", help="output directory for the evaluation sweeps")
    s.add_argument("--tilts", type=_floats, help="training tilts in degrees, comma separated")
    s.add_argument("--eval-tilts", type=_floats, help="evaluation tilts in degrees")
    s.add_argument("--frames", type=int, help="frames per sweep")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("train", parents=[common_flags(), cfg], help="fit a Gaussian field to a dataset")
    s.add_argument("--data", required=True, help="training dataset directory")
    s.add_argument("--eval-data", help="held-out dataset for the periodic GMSD snapshot")
    s.add_argument("--init", help="start from this scene file instead of a random field")
    s.add_argument("--out", default="run", help="output directory (scene, telemetry, checkpoints)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", parents=[common_flags()], help="render a scene at every pose of a dataset")
    s.add_argument("--scene", required=True, help="scene file to render")
    s.add_argument("--data", required=True, help="dataset whose poses and geometry are used")
    s.add_argument("--out", required=True, help="output directory for the images")
    s.add_argument("--maps", action="store_true", help="also export echo and transmittance maps")
    s.add_argument("--float", action="store_true", help="also export float32 raw images")
    s.add_argument("--no-attenuation", action="store_true", help="render with all transmittances at 1")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common_flags()], help="PSNR, MS-SSIM, GMS, GMSD of a scene on a dataset")
    s.add_argument("--scene", required=True, help="scene file to evaluate")
    s.add_argument("--data", required=True, help="dataset with the reference frames")
    s.add_argument("--out", default="eval.csv", help="per-frame CSV with a mean±std summary row")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compound", parents=[common_flags()], help="median/max voxel compounding")
    s.add_argument("--data", required=True, help="tracked sweep dataset to compound")
    s.add_argument("--mode", choices=("median", "max"), default="median", help="per-voxel reduction (default median)")
    s.add_argument("--spacing", type=float, default=0.25, help="isotropic voxel size in mm")
    s.add_argument("--out", required=True, help="raw float32 volume path (sidecar written next to it)")
    s.set_defaults(func=cmd_compound)

    s = sub.add_parser("reslice", parents=[common_flags()], help="re-slice a volume at the poses of a dataset")
    s.add_argument("--volume", required=True, help="raw volume written by compound")
    s.add_argument("--data", required=True, help="dataset whose poses are re-sliced and scored")
    s.add_argument("--out", required=True, help="output directory for slices and metrics.csv")
    s.set_defaults(func=cmd_reslice)

    s = sub.add_parser("grad-check", parents=[common_flags()], help="finite-difference gradient check")
    s.add_argument("--counts", type=_ints, default=[1, 5, 20], help="scene sizes (default 1,5,20)")
    s.add_argument("--repeats", type=int, default=3, help="consecutive seeds per scene size (default 3)")
    s.add_argument("--size", type=int, default=16, help="image size in pixels")
    s.add_argument("--tolerance", type=float, default=1e-4, help="relative tolerance (default 1e-4)")
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("ablate-angles", parents=[common_flags(), cfg], help="metrics against evaluation tilt")
    s.add_argument("--data", required=True, help="training dataset")
    s.add_argument("--eval-data", required=True, help="dataset holding the evaluation tilts")
    s.add_argument("--tilts", type=_floats, default=[-3.0, -5.0, -7.0, -10.0],
                   help="evaluation tilts in degrees (default -3,-5,-7,-10)")
    s.add_argument("--scene", help="evaluate this scene instead of training one")
    s.add_argument("--out", default="ablate_angles.csv", help="output CSV, one row per tilt")
    s.set_defaults(func=cmd_ablate_angles)

    s = sub.add_parser("ablate-count", parents=[common_flags(), cfg], help="metrics against the Gaussian cap")
    s.add_argument("--data", required=True, help="training dataset")
    s.add_argument("--eval-data", help="evaluation dataset (default: the training frames)")
    s.add_argument("--caps", type=_ints, default=[10000, 100000, 500000],
                   help="Gaussian caps to train with (default 10000,100000,500000)")
    s.add_argument("--out", default="ablate_count.csv", help="output CSV, one row per cap")
    s.set_defaults(func=cmd_ablate_count)
    return p


def _failing_module(exc: BaseException) -> str:
    name = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("ultragray."):
            name = mod.split(".", 1)[1]
    return name


def set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba

    if n < 1:
        raise UltraGRayError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        rc = args.func(args, argv)
        return int(rc or 0)
    except (UltraGRayError, OSError, ValueError, KeyError) as exc:
        print(f"ultragray: error in {_failing_module(exc)}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
