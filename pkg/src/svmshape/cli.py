"""``svmshape`` command line.

Exit codes: 0 success, 1 IO or usage error, 2 degenerate input, 3 empty
result, 4 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, metrics, nets, surface, trainer
from .errors import SvmShapeError
from .fileio import format_points, format_spec, parse_points, parse_spec, write_atomic
from .shapes import FAMILIES, make_shape, random_family, shape_descriptor
from .svm_core import KernelParams, fit, format_model, parse_model
from .svm_diff import finite_diff_check, random_instance

GRADCHECK_TOL = 1e-4


class UsageError(SvmShapeError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _read(path) -> str:
    return Path(path).read_text()


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SVMSHAPE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"SVMSHAPE_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("SVMSHAPE_THREADS must be positive")
        return n
    return 1


def _resolution(value) -> int:
    r = int(value)
    if r < surface.MIN_RESOLUTION:
        raise argparse.ArgumentTypeError(f"resolution must be at least {surface.MIN_RESOLUTION}")
    return r


def _kernel(args) -> KernelParams:
    sigma = args.sigma
    mode = {"iso": "isotropic", "aniso": "anisotropic"}[args.kernel]
    if mode == "anisotropic" and len(sigma) == 1:
        sigma = sigma * 3
    try:
        return KernelParams(mode, sigma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# commands -----------------------------------------------------------------------

def cmd_gen_data(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = random_family(args.family, args.count, args.seed)
    for i, spec in enumerate(specs):
        write_atomic(out / f"shape_{i:04d}.shape", format_spec(spec))
        if args.samples:
            oracle = make_shape(spec)
            seeds = np.random.SeedSequence([args.seed, i]).generate_state(2)
            half = args.samples // 2
            pts = oracle.sample_uniform(half, int(seeds[0])).concat(
                oracle.sample_near_surface(args.samples - half, seed=int(seeds[1]))).to_occupancy()
            write_atomic(out / f"shape_{i:04d}.pts", format_points(pts))
    print(f"wrote {len(specs)} shapes to {out}")


def cmd_fit(args):
    pts = parse_points(_read(args.points)).to_svm()
    model = fit(pts.points, pts.labels, _kernel(args), args.c, args.tol)
    write_atomic(args.out, format_model(model))
    print(f"bias {model.bias!r}")
    print(f"kkt_residual {model.kkt_residual:.3e}")
    print(f"support_vectors {int(np.count_nonzero(model.alpha > 0))}")


def _load_params(path) -> nets.NetParams:
    return trainer.load_checkpoint(path).params


def cmd_reconstruct(args):
    if args.model:
        pred = surface.OccupancyPredictor(parse_model(_read(args.model)))
    elif args.checkpoint and args.shape:
        params = _load_params(args.checkpoint)
        pred = surface.predictor_for_task(params, shape_descriptor(parse_spec(_read(args.shape))))
    else:
        raise UsageError("give --model, or --checkpoint together with --shape")
    mesh = surface.marching_cubes(surface.predict_grid(pred, args.resolution), args.iso)
    write_atomic(args.out, mesh.to_obj())
    print(f"vertices {len(mesh.vertices)} triangles {len(mesh.triangles)} watertight {mesh.is_watertight()}")


def cmd_eval(args):
    mesh = surface.Mesh.from_obj(_read(args.pred))
    gt = make_shape(parse_spec(_read(args.gt_shape)))
    report = metrics.evaluate_mesh(Path(args.pred).stem, mesh, gt, args.samples, args.samples, args.seed, args.d)
    text = metrics.reports_csv([report])
    if args.out:
        write_atomic(args.out, text)
    print(text, end="")


def _load_dataset(args, cfg: trainer.TrainConfig) -> trainer.TaskDataset:
    if args.data:
        files = sorted(Path(args.data).glob("*.shape"))
        if not files:
            raise UsageError(f"no .shape files in {args.data}")
        return trainer.TaskDataset.from_specs([parse_spec(f.read_text()) for f in files], cfg.seed)
    return trainer.TaskDataset.generate(cfg.family, cfg.n_shapes, cfg.seed)


def _config(args) -> trainer.TrainConfig:
    items = {}
    if getattr(args, "config", None):
        items = trainer._parse_kv(_read(args.config))
    if args.seed is not None:
        items["seed"] = str(args.seed)
    if getattr(args, "steps", None) is not None:
        items["steps"] = str(args.steps)
    items["threads"] = str(_threads(args))
    return trainer.TrainConfig.from_items(items)


def _progress(step, loss, skipped):
    if step % 50 == 0:
        print(f"step {step} loss {loss:.6f} skipped {skipped}", flush=True)


def cmd_train(args):
    out = Path(args.out)
    resume = None
    if args.resume and (out / trainer.CHECKPOINT_NAME).exists():
        resume = trainer.load_checkpoint(out)
    cfg = _config(args)
    data = _load_dataset(args, resume.config if resume else cfg)
    res = trainer.train(cfg, data, out, resume=resume, log=_progress)
    print(f"finished at step {res.checkpoint.step}; checkpoint in {out}")


def cmd_ablate(args):
    base = _config(args)
    data = _load_dataset(args, base)
    val = [data.tasks[i] for i in data.validation] or [data.tasks[i] for i in data.train]
    rows = []
    for n in args.n:
        for kern in args.kernel:
            for emb in args.embedding:
                for rep in range(args.repeats):
                    cfg = trainer.TrainConfig.from_items({
                        **{k: trainer._fmt(getattr(base, k)) for k in trainer.TrainConfig.keys()},
                        "n_points": str(n), "kernel_mode": kern, "use_embedding": emb,
                        "seed": str(base.seed + rep)})
                    res = trainer.train(cfg, data)
                    ious = trainer.predictor_iou(res.checkpoint.params, val, args.iou_samples, base.seed)
                    iou = float(np.nanmean(ious)) if not all(map(math.isnan, ious)) else math.nan
                    rows.append([n, kern, emb, cfg.seed, repr(iou)])
                    print(f"n={n} kernel={kern} embedding={emb} seed={cfg.seed} iou={iou:.4f}", flush=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_points", "kernel", "embedding", "seed", "iou"])
    w.writerows(rows)
    write_atomic(args.out, buf.getvalue())


def cmd_prune(args):
    params = _load_params(args.checkpoint)
    spec = parse_spec(_read(args.shape))
    pred = surface.predictor_for_task(params, shape_descriptor(spec))
    polarity = 1 if args.polarity == "pos" else -1
    trace = analysis.greedy_prune(pred, make_shape(spec), polarity, args.steps, args.iou_samples, args.seed,
                                  args.out_dir, args.resolution)
    print(f"base_iou {trace.base_iou:.6f}")
    for s in trace.steps:
        print(f"step {s.step} removed {s.removed_index} iou {s.iou:.6f}")


def cmd_gradcheck(args):
    worst, worst_name, skipped = 0.0, "", 0
    rng = np.random.default_rng(args.seed)
    modes = ["anisotropic", "isotropic"] if args.kernel == "both" else [
        {"iso": "isotropic", "aniso": "anisotropic"}[args.kernel]]
    for trial in range(args.trials):
        mode = modes[trial % len(modes)]
        pts, labels, kernel, queries = random_instance(rng, args.n, args.queries, mode)
        rep = finite_diff_check(pts, labels, kernel, 1.0, queries, h=args.h, seed=trial)
        if not rep.ok:
            skipped += 1
            continue
        if rep.max_rel_err > worst:
            worst, worst_name = rep.max_rel_err, f"trial {trial} {rep.worst_coordinate}"
        if args.verbose:
            print(rep.table())
    print(f"trials {args.trials} skipped {skipped} max_rel_err {worst:.3e} at {worst_name or '-'}")
    if worst > GRADCHECK_TOL:
        print(f"FAIL: exceeds {GRADCHECK_TOL:g}", file=sys.stderr)
        return 1
    print("PASS")
    return 0


def cmd_interp(args):
    params = _load_params(args.checkpoint)
    a = shape_descriptor(parse_spec(_read(args.shape_a)))
    b = shape_descriptor(parse_spec(_read(args.shape_b)))
    la, lb = nets.feature_forward(params, a), nets.feature_forward(params, b)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.frames + 1):
        t = k / args.frames
        lam = la if k == 0 else lb if k == args.frames else nets.interpolate_features(la, lb, t)
        mesh = surface.reconstruct(params, lam=lam, resolution=args.resolution)
        write_atomic(out / f"frame_{k:03d}.obj", mesh.to_obj())
        print(f"t={t:.4f} triangles {len(mesh.triangles)}")


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svmshape", description="Shape reconstruction with a differentiable kernel SVM.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help):
        c = sub.add_parser(name, help=help, description=help)
        c.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        c.add_argument("--threads", type=int, default=None,
                       help="worker threads; falls back to SVMSHAPE_THREADS, then 1")
        c.set_defaults(func=fn)
        return c

    c = command("gen-data", cmd_gen_data, "write a random shape family as spec files")
    c.add_argument("--family", choices=FAMILIES, required=True)
    c.add_argument("--count", type=int, required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--samples", type=int, default=0, help="also write this many labeled samples per shape")

    c = command("fit", cmd_fit, "fit a kernel SVM to a labeled point file")
    c.add_argument("--points", required=True, help="point file with '# labels=...' header and 'x y z label' rows")
    c.add_argument("--kernel", choices=("iso", "aniso"), default="aniso")
    c.add_argument("--sigma", type=_csv_list(float), default=[0.15], help="one value, or three for aniso")
    c.add_argument("--c", type=float, default=1.0, help="box constraint C (default 1)")
    c.add_argument("--tol", type=float, default=1e-8, help="KKT tolerance (default 1e-8)")
    c.add_argument("--out", required=True)

    c = command("reconstruct", cmd_reconstruct, "extract a mesh from a model or a trained checkpoint")
    c.add_argument("--model", help="model file written by 'fit'")
    c.add_argument("--checkpoint", help="checkpoint file or training directory")
    c.add_argument("--shape", help="shape spec file (with --checkpoint)")
    c.add_argument("--resolution", type=_resolution, default=64, help="lattice points per axis (>= 8)")
    c.add_argument("--iso", type=float, default=0.0, help="discriminant level to extract (default 0)")
    c.add_argument("--out", required=True)

    c = command("eval", cmd_eval, "score a mesh against a ground-truth shape")
    c.add_argument("--pred", required=True, help="OBJ mesh")
    c.add_argument("--gt-shape", required=True, help="shape spec file")
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--d", type=float, default=0.02, help="F-score distance threshold (default 0.02)")
    c.add_argument("--out", help="write the CSV here as well as to stdout")

    c = command("train", cmd_train, "meta-train the networks")
    c.add_argument("--config", help="key = value config file; unknown keys are rejected")
    c.add_argument("--data", help="directory of .shape files (default: generate from the config)")
    c.add_argument("--out", required=True, help="output directory for checkpoint.txt and metrics.csv")
    c.add_argument("--steps", type=int, default=None, help="override the configured step count")
    c.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    c = command("ablate", cmd_ablate, "train over a grid of N, kernel and embedding settings")
    c.add_argument("--n", type=_csv_list(int), default=[4, 8, 16, 32, 64])
    c.add_argument("--kernel", type=_csv_list(str), default=["iso", "aniso"])
    c.add_argument("--embedding", type=_csv_list(str), default=["on", "off"])
    c.add_argument("--repeats", type=int, default=1, help="seeds per grid cell")
    c.add_argument("--iou-samples", type=int, default=20_000)
    c.add_argument("--config")
    c.add_argument("--data")
    c.add_argument("--steps", type=int, default=None)
    c.add_argument("--out", required=True, help="results CSV")

    c = command("prune", cmd_prune, "greedily delete generated points of one polarity")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--shape", required=True)
    c.add_argument("--polarity", choices=("pos", "neg"), required=True)
    c.add_argument("--steps", type=int, default=10)
    c.add_argument("--iou-samples", type=int, default=20_000)
    c.add_argument("--resolution", type=_resolution, default=64)
    c.add_argument("--out-dir", required=True)

    c = command("gradcheck", cmd_gradcheck, "compare SVM gradients with central differences")
    c.add_argument("--trials", type=int, default=50)
    c.add_argument("--kernel", choices=("iso", "aniso", "both"), default="both")
    c.add_argument("--n", type=int, default=8, help="points per instance")
    c.add_argument("--queries", type=int, default=4)
    c.add_argument("--h", type=float, default=1e-4, help="finite-difference step")
    c.add_argument("--verbose", action="store_true", help="print the per-coordinate table")

    c = command("interp", cmd_interp, "meshes along the straight line between two shape features")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--shape-a", required=True)
    c.add_argument("--shape-b", required=True)
    c.add_argument("--frames", type=int, default=5)
    c.add_argument("--resolution", type=_resolution, default=64)
    c.add_argument("--out-dir", required=True)
    return p


def _validate(args):
    for name in ("count", "trials", "frames", "samples"):
        v = getattr(args, name, None)
        if v is not None and v < (0 if name == "samples" and args.command == "gen-data" else 1):
            raise UsageError(f"--{name} must be positive")
    if getattr(args, "steps", None) is not None and args.steps < 0:
        raise UsageError("--steps must be non-negative")
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be positive")
    if args.command == "ablate":
        for k in args.kernel:
            if k not in ("iso", "aniso", "isotropic", "anisotropic"):
                raise UsageError(f"unknown kernel {k!r}")
        for e in args.embedding:
            if e not in ("on", "off"):
                raise UsageError(f"embedding must be on or off, got {e!r}")
        args.embedding = ["true" if e == "on" else "false" for e in args.embedding]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        return args.func(args) or 0
    except SvmShapeError as exc:
        print(f"svmshape: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"svmshape: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
