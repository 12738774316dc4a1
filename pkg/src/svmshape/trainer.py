"""Meta-training: generate a point set per shape, fit its SVM, score it on fresh samples."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nets
from .fileio import write_atomic
from .errors import (AllTasksSkipped, DegenerateActiveSet, DegenerateInput, EmptySurface, InvalidSpec,
                     NoConvergence, SingleClass, SingularKkt, TaskSkipped)
from .metrics import MetricsReport, evaluate_mesh, summarize, volumetric_iou
from .nets import NetParams
from .shapes import (FAMILIES, OCCUPANCY_01, LabeledPointSet, ShapeOracle, ShapeSpec, make_shape, random_family,
                     shape_descriptor)
from .surface import marching_cubes, predict_grid, predictor_for_task
from .svm_core import ANISOTROPIC, ISOTROPIC

SKIPPABLE = (SingleClass, DegenerateActiveSet, SingularKkt, NoConvergence)


@dataclass
class TrainConfig:
    n_points: int = 32
    kernel_mode: str = ANISOTROPIC
    C: float = 1.0
    batch_tasks: int = 8
    points_uniform_per_step: int = 1024
    points_near_surface_per_step: int = 1024
    near_surface_std: float = 0.05
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    use_embedding: bool = True
    beta_per_shape: bool = False
    offline_cache: int = 0
    checkpoint_every: int = 100
    family: str = "ellipsoid_box"
    n_shapes: int = 200
    threads: int = 1

    def __post_init__(self):
        self.kernel_mode = nets.canonical_mode(self.kernel_mode)
        for name in ("n_points", "batch_tasks", "steps", "checkpoint_every", "n_shapes", "threads"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.points_uniform_per_step < 0 or self.points_near_surface_per_step < 0 or (
                self.points_uniform_per_step + self.points_near_surface_per_step == 0):
            raise InvalidSpec("need at least one test point per step")
        if self.n_points % 2:
            raise InvalidSpec("n_points must be even")
        if not self.lr > 0 or not self.C > 0:
            raise InvalidSpec("lr and C must be positive")
        per_step = self.points_uniform_per_step + self.points_near_surface_per_step
        if self.offline_cache < 0 or 0 < self.offline_cache < per_step:
            raise InvalidSpec(f"offline_cache must be 0 or at least {per_step} points")
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in self.keys())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls.from_items(_parse_kv(text))

    @classmethod
    def from_items(cls, items: dict) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = sorted(set(items) - set(types))
        if unknown:
            raise InvalidSpec(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(cls.keys())}")
        kw = {}
        for k, v in items.items():
            kind = types[k]
            try:
                if kind == "bool":
                    if str(v).lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                        raise ValueError(v)
                    kw[k] = str(v).lower() in ("1", "true", "yes", "on")
                elif kind == "int":
                    kw[k] = int(v)
                elif kind == "float":
                    kw[k] = float(v)
                else:
                    kw[k] = str(v)
            except ValueError:
                raise InvalidSpec(f"bad value for {k}: {v!r}") from None
        return cls(**kw)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_kv(text: str) -> dict:
    out = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise InvalidSpec(f"expected key = value, got {ln!r}")
        k, v = ln.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# data --------------------------------------------------------------------------

@dataclass
class TaskDataset:
    specs: list
    tasks: list
    descriptors: np.ndarray
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @classmethod
    def from_specs(cls, specs: list[ShapeSpec], seed: int = 0, val_fraction: float = 0.1,
                   test_fraction: float = 0.1) -> "TaskDataset":
        n = len(specs)
        perm = np.random.default_rng(np.random.SeedSequence([seed, 7])).permutation(n)
        n_val = int(round(val_fraction * n))
        n_test = int(round(test_fraction * n))
        if n_val + n_test >= n:
            n_val = n_test = 0
        return cls(list(specs), [make_shape(s) for s in specs],
                   np.array([shape_descriptor(s) for s in specs]).reshape(n, -1),
                   np.sort(perm[n_val + n_test:]), np.sort(perm[:n_val]), np.sort(perm[n_val:n_val + n_test]))

    @classmethod
    def generate(cls, family: str, count: int, seed: int, **kw) -> "TaskDataset":
        return cls.from_specs(random_family(family, count, seed), seed, **kw)

    def __len__(self):
        return len(self.tasks)


def sample_test_batch(oracle: ShapeOracle, cfg: TrainConfig, seed: int, cache: LabeledPointSet | None = None
                      ) -> LabeledPointSet:
    """Fresh uniform + near-surface samples with occupancy labels."""
    if cache is not None:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(cache), cfg.points_uniform_per_step + cfg.points_near_surface_per_step, replace=False)
        return LabeledPointSet(cache.points[idx], cache.labels[idx], OCCUPANCY_01)
    s_u, s_n = np.random.SeedSequence(seed).spawn(2)
    parts = []
    if cfg.points_uniform_per_step:
        parts.append(oracle.sample_uniform(cfg.points_uniform_per_step, int(s_u.generate_state(1)[0])))
    if cfg.points_near_surface_per_step:
        parts.append(oracle.sample_near_surface(cfg.points_near_surface_per_step, cfg.near_surface_std,
                                                int(s_n.generate_state(1)[0])))
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out.to_occupancy()


def build_cache(oracle: ShapeOracle, cfg: TrainConfig, seed: int) -> LabeledPointSet:
    half = cfg.offline_cache // 2
    big = dataclasses.replace(cfg, points_uniform_per_step=half,
                              points_near_surface_per_step=cfg.offline_cache - half)
    return sample_test_batch(oracle, big, seed)


# one task ----------------------------------------------------------------------

def task_loss_graph(params: NetParams, w: dict, descriptor, batch: LabeledPointSet, C: float = 1.0):
    """Record ``mean((sigmoid(beta * P(g(x))) - y)^2)`` on the tape behind ``w``."""
    n = params.n_points
    lam = nets.feature_net(w, descriptor)
    pts, sigma, beta_raw = nets.pointgen_net(w, lam, n, params.kernel_mode, params.beta_per_shape)
    xs = ad.concat([pts, ad.constant(batch.points)], axis=0)
    # With use_embedding off the output layer stays frozen at zero, so g is the identity.
    emb = nets.embed_net(w, xs, lam)
    support, queries = ad.take(emb, slice(0, n)), ad.take(emb, slice(n, None))
    values, model = ad.svm_discriminant(support, sigma, queries, params.labels, params.kernel_mode, C)
    pred = ad.sigmoid(ad.scale(nets.beta_tensor(w, beta_raw), values))
    loss = ad.mean(ad.square(ad.sub(pred, ad.constant(batch.labels.astype(float)))))
    return loss, model


def forward_task(params: NetParams, oracle: ShapeOracle, cfg: TrainConfig, seed: int, descriptor=None,
                 cache=None) -> float:
    """Loss of one task on a freshly sampled test batch.

    Raises
    ------
    TaskSkipped
        Wrapping the inner degenerate-solve error.
    """
    d = shape_descriptor(oracle.spec) if descriptor is None else descriptor
    batch = sample_test_batch(oracle, cfg, seed, cache)
    try:
        loss, _ = task_loss_graph(params, params.bind(), d, batch, cfg.C)
    except SKIPPABLE as exc:
        raise TaskSkipped(exc) from exc
    return float(loss.data)


def task_gradient(params: NetParams, oracle: ShapeOracle, cfg: TrainConfig, seed: int, descriptor=None,
                  cache=None) -> tuple[float, dict]:
    d = shape_descriptor(oracle.spec) if descriptor is None else descriptor
    batch = sample_test_batch(oracle, cfg, seed, cache)
    tape = ad.Tape()
    try:
        loss, _ = task_loss_graph(params, params.bind(tape), d, batch, cfg.C)
        grads = ad.backward(tape, loss)
    except SKIPPABLE as exc:
        raise TaskSkipped(exc) from exc
    return float(loss.data), grads


# optimizer ---------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-4
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: NetParams, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name in params.trainable():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params.arrays[name] = params.arrays[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# checkpoints -------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: NetParams
    step: int
    config: TrainConfig
    optimizer: Adam


def format_checkpoint(ck: Checkpoint) -> str:
    p, opt = ck.params, ck.optimizer
    lines = [f"{nets.CHECKPOINT_MAGIC} {nets.CHECKPOINT_VERSION}", f"step {ck.step}"]
    lines += [f"config {ln}" for ln in ck.config.to_text().splitlines()]
    lines.append(f"optimizer adam lr={opt.lr!r} b1={opt.b1!r} b2={opt.b2!r} eps={opt.eps!r} t={opt.t}")
    lines += nets.format_arrays("", p.arrays)
    lines += nets.format_arrays("adam.m.", opt.m)
    lines += nets.format_arrays("adam.v.", opt.v)
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> Checkpoint:
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if head[:1] != [nets.CHECKPOINT_MAGIC] or len(head) != 2:
        raise InvalidSpec("not a checkpoint file")
    if int(head[1]) != nets.CHECKPOINT_VERSION:
        raise InvalidSpec(f"unsupported checkpoint version {head[1]}")
    step, cfg_lines, opt_kw, i = 0, [], {}, 1
    while i < len(lines) and not lines[i].startswith("array "):
        key, _, rest = lines[i].partition(" ")
        if key == "step":
            step = int(rest)
        elif key == "config":
            cfg_lines.append(rest)
        elif key == "optimizer":
            for item in rest.split()[1:]:
                k, v = item.split("=")
                opt_kw[k] = int(v) if k == "t" else float(v)
        i += 1
    cfg = TrainConfig.from_text("\n".join(cfg_lines))
    arrays = nets.parse_arrays(lines[i:])
    opt = Adam(**opt_kw)
    opt.m = {k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")}
    opt.v = {k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")}
    weights = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    params = NetParams(weights, cfg.n_points, cfg.kernel_mode, cfg.beta_per_shape, cfg.use_embedding,
                       {"C": cfg.C})
    return Checkpoint(params, step, cfg, opt)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    return parse_checkpoint(path.read_text())


CHECKPOINT_NAME = "checkpoint.txt"
METRICS_NAME = "metrics.csv"


# training loop -----------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list
    skipped: list


def initial_checkpoint(cfg: TrainConfig) -> Checkpoint:
    params = nets.init_params(cfg.n_points, cfg.kernel_mode, cfg.seed, cfg.use_embedding, cfg.beta_per_shape)
    params.meta["C"] = cfg.C
    return Checkpoint(params, 0, cfg, Adam(lr=cfg.lr))


def _task_seed(cfg: TrainConfig, step: int, slot: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, step, slot]).generate_state(1)[0])


def train_step(ck: Checkpoint, data: TaskDataset, caches: dict | None = None,
               pool: ThreadPoolExecutor | None = None) -> tuple[float, int]:
    """One Adam update on the mean gradient of a task batch; returns (loss, skipped)."""
    cfg, params, step = ck.config, ck.params, ck.step
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, 2 ** 31]))
    pool_idx = data.train
    k = min(cfg.batch_tasks, len(pool_idx))
    chosen = rng.choice(pool_idx, k, replace=False)

    def run(slot):
        t = int(chosen[slot])
        cache = caches.get(t) if caches else None
        try:
            return task_gradient(params, data.tasks[t], cfg, _task_seed(cfg, step, slot), data.descriptors[t], cache)
        except TaskSkipped as exc:
            return exc
        except FloatingPointError as exc:
            raise FloatingPointError(f"task {t} at step {step}: {exc}") from exc

    results = list(pool.map(run, range(k))) if pool else [run(s) for s in range(k)]
    done = [r for r in results if not isinstance(r, TaskSkipped)]
    skipped = k - len(done)
    if not done:
        raise AllTasksSkipped(f"every task in the batch at step {step} was skipped")
    loss = float(np.mean([r[0] for r in done]))
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at step {step}")
    grads = {name: sum(r[1][name] for r in done) / len(done) for name in params.trainable()}
    ck.optimizer.step(params, grads)
    ck.step += 1
    return loss, skipped


def train(cfg: TrainConfig, data: TaskDataset, out_dir=None, resume: Checkpoint | None = None,
          log=None) -> TrainResult:
    """Run ``cfg.steps`` total steps, writing ``metrics.csv`` and ``checkpoint.txt`` to ``out_dir``.

    Resuming continues from ``resume.step`` and appends to the existing
    loss log, so an interrupted run reproduces an uninterrupted one.
    """
    ck = resume if resume is not None else initial_checkpoint(cfg)
    if resume is not None:
        ck.config = dataclasses.replace(resume.config, steps=cfg.steps)
        cfg = ck.config
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is not None and (out / METRICS_NAME).exists():
            with open(out / METRICS_NAME) as fh:
                rows = [r for r in csv.reader(fh)][1:]
            rows = [r for r in rows if int(r[0]) < ck.step]
    caches = None
    if cfg.offline_cache:
        caches = {int(t): build_cache(data.tasks[t], cfg, _task_seed(cfg, 2 ** 32 - 1, int(t))) for t in data.train}
    losses, skipped = [], []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        while ck.step < cfg.steps:
            step = ck.step
            loss, n_skip = train_step(ck, data, caches, pool)
            losses.append(loss)
            skipped.append(n_skip)
            rows.append([str(step), repr(loss), str(n_skip)])
            if log is not None:
                log(step, loss, n_skip)
            if out is not None and (ck.step % cfg.checkpoint_every == 0 or ck.step == cfg.steps):
                _write_run(out, ck, rows)
    finally:
        if pool:
            pool.shutdown()
    if out is not None:
        _write_run(out, ck, rows)
    return TrainResult(ck, losses, skipped)


def _write_run(out: Path, ck: Checkpoint, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "skipped"])
    w.writerows(rows)
    write_atomic(out / METRICS_NAME, buf.getvalue())
    write_atomic(out / CHECKPOINT_NAME, format_checkpoint(ck))


# evaluation --------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    resolution: int = 64
    n_volume: int = 100_000
    n_surface: int = 100_000
    seed: int = 0
    f_distance: float = 0.02


def evaluate_checkpoint(params: NetParams, tasks: list[ShapeOracle], cfg: EvalConfig = EvalConfig(),
                        task_ids=None) -> tuple[list[MetricsReport], dict]:
    """Reconstruct each task's mesh and score it; failures become NaN rows."""
    reports = []
    ids = list(range(len(tasks))) if task_ids is None else list(task_ids)
    for tid, oracle in zip(ids, tasks):
        try:
            pred = predictor_for_task(params, shape_descriptor(oracle.spec))
            mesh = marching_cubes(predict_grid(pred, cfg.resolution))
            reports.append(evaluate_mesh(tid, mesh, oracle, cfg.n_volume, cfg.n_surface, cfg.seed, cfg.f_distance))
        except (DegenerateInput, EmptySurface, NoConvergence) as exc:
            reports.append(MetricsReport.failure(tid, f"{type(exc).__name__}: {exc}", cfg.n_volume,
                                                 cfg.n_surface, cfg.seed))
    return reports, summarize(reports)


def predictor_iou(params: NetParams, tasks: list[ShapeOracle], n: int = 20_000, seed: int = 0) -> list[float]:
    """IoU of the occupancy field itself (no meshing); NaN when the task fails."""
    out = []
    for oracle in tasks:
        try:
            out.append(volumetric_iou(predictor_for_task(params, shape_descriptor(oracle.spec)), oracle, n, seed))
        except (DegenerateInput, NoConvergence):
            out.append(math.nan)
    return out


__all__ = [
    "TrainConfig", "TaskDataset", "Adam", "Checkpoint", "EvalConfig", "forward_task", "task_gradient", "train",
    "train_step", "evaluate_checkpoint", "predictor_iou", "load_checkpoint", "format_checkpoint",
    "parse_checkpoint", "ISOTROPIC", "ANISOTROPIC",
]
