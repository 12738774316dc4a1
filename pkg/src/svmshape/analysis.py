"""Nearest-neighbor reading of the generated point set and greedy point removal."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySurface, SingleClass
from .fileio import write_atomic
from .metrics import inside
from .shapes import LabeledPointSet, ShapeOracle
from .surface import OccupancyPredictor, marching_cubes, predict_grid
from .svm_core import discriminant, fit


def _sq_dist(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    return ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)


def voronoi_region(train: LabeledPointSet, q):
    """Index of the nearest training point; equal distances go to the lowest index."""
    if not len(train):
        raise ValueError("training set is empty")
    arr = np.asarray(q, dtype=float)
    idx = np.argmin(_sq_dist(train.points, np.atleast_2d(arr)), axis=1)
    return int(idx[0]) if arr.ndim == 1 else idx


def knn1_label(train: LabeledPointSet, q):
    region = voronoi_region(train, q)
    labels = train.to_svm().labels
    return int(labels[region]) if np.ndim(region) == 0 else labels[region]


@dataclass(frozen=True)
class PruneStep:
    step: int
    removed_index: int
    polarity: int
    iou: float
    mesh_path: str | None
    candidates: tuple = ()


@dataclass
class PruneTrace:
    base_iou: float
    polarity: int
    steps: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "removed_index", "polarity", "iou"])
        for s in self.steps:
            w.writerow([s.step, s.removed_index, s.polarity, repr(float(s.iou))])
        return buf.getvalue()


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


def greedy_prune(pred: OccupancyPredictor, gt: ShapeOracle, polarity: int, steps: int,
                 iou_samples: int = 20_000, seed: int = 0, out_dir=None, resolution: int = 64) -> PruneTrace:
    """Repeatedly delete the point of ``polarity`` whose removal keeps IoU highest.

    All candidates of one step are scored on the same uniform sample set.
    Removing the last point of a class leaves a constant classifier that
    predicts the other class everywhere.
    """
    if polarity not in (1, -1):
        raise ValueError("polarity must be +1 or -1")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    svm = pred.svm
    labels = svm.labels
    available = int(np.count_nonzero(labels == polarity))
    if steps > available:
        raise SingleClass(f"only {available} points of polarity {polarity:+d}; step {available + 1} "
                          "would leave a single class")
    pts = np.random.default_rng(seed).uniform(-0.5, 0.5, (iou_samples, 3))
    truth = inside(gt, pts)
    emb = pred.embed(pts)
    base_iou = _iou(discriminant(svm, emb) > 0, truth)
    trace = PruneTrace(base_iou, polarity)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    keep = np.arange(len(labels))
    for k in range(1, steps + 1):
        scores, models = [], []
        for i in keep[labels[keep] == polarity]:
            rest = keep[keep != i]
            if np.all(labels[rest] == labels[rest[0]]):
                model = None
                predicted = np.full(len(pts), labels[rest[0]] > 0)
            else:
                model = fit(svm.support_points[rest], labels[rest], svm.kernel, svm.C)
                predicted = discriminant(model, emb) > 0
            scores.append((int(i), _iou(predicted, truth)))
            models.append(model)
        best = max(range(len(scores)), key=lambda j: (scores[j][1], -scores[j][0]))
        removed, iou = scores[best]
        keep = keep[keep != removed]
        mesh_path = None
        if out is not None and models[best] is not None:
            try:
                mesh = marching_cubes(predict_grid(pred.with_svm(models[best]), resolution))
            except EmptySurface:
                mesh = None
            if mesh is not None:
                mesh_path = str(out / f"step_{k:03d}.obj")
                write_atomic(mesh_path, mesh.to_obj())
        trace.steps.append(PruneStep(k, removed, polarity, iou, mesh_path, tuple(scores)))
    if out is not None:
        write_atomic(out / "trace.csv", trace.to_csv())
    return trace
