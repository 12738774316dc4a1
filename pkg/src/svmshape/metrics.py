"""Volumetric IoU, Chamfer-L1 and F-score."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMesh, UndefinedIoU
from .shapes import ShapeOracle
from .surface import Mesh, OccupancyPredictor

DEFAULT_SAMPLES = 100_000
DEFAULT_F_DISTANCE = 0.02
_RAY_BINS = 64
_RAY_CHUNK = 16384


# insideness ----------------------------------------------------------------------

def _axis_crossings(mesh: Mesh, pts: np.ndarray, axis: int) -> np.ndarray:
    """Number of triangles hit by the ray from each point toward +axis."""
    u_ax, v_ax = [d for d in range(3) if d != axis]
    tri = mesh.vertices[mesh.triangles]  # (F, 3, 3)
    tu, tv, tw = tri[:, :, u_ax], tri[:, :, v_ax], tri[:, :, axis]
    lo_u, hi_u = tu.min(1), tu.max(1)
    lo_v, hi_v = tv.min(1), tv.max(1)
    origin = np.array([lo_u.min(), lo_v.min()])
    span = np.maximum(np.array([hi_u.max(), hi_v.max()]) - origin, 1e-12)
    nb = _RAY_BINS

    def cell(c, d):
        return np.clip(((c - origin[d]) / span[d] * nb).astype(np.int64), 0, nb - 1)

    # Register every triangle in each 2-D bin its bounding box overlaps.
    bu0, bu1, bv0, bv1 = cell(lo_u, 0), cell(hi_u, 0), cell(lo_v, 1), cell(hi_v, 1)
    nu, nv = bu1 - bu0 + 1, bv1 - bv0 + 1
    per = nu * nv
    owner = np.repeat(np.arange(len(tri)), per)
    offs = np.arange(per.sum()) - np.repeat(np.cumsum(per) - per, per)
    bins = (np.repeat(bu0, per) + offs // np.repeat(nv, per)) * nb + np.repeat(bv0, per) + offs % np.repeat(nv, per)
    order = np.argsort(bins, kind="stable")
    bins, owner = bins[order], owner[order]
    starts = np.searchsorted(bins, np.arange(nb * nb))
    ends = np.searchsorted(bins, np.arange(nb * nb), side="right")

    counts = np.zeros(len(pts), dtype=np.int64)
    for c0 in range(0, len(pts), _RAY_CHUNK):
        p = pts[c0:c0 + _RAY_CHUNK]
        pu, pv, pw = p[:, u_ax], p[:, v_ax], p[:, axis]
        b = cell(pu, 0) * nb + cell(pv, 1)
        n_cand = ends[b] - starts[b]
        pid = np.repeat(np.arange(len(p)), n_cand)
        k = np.arange(n_cand.sum()) - np.repeat(np.cumsum(n_cand) - n_cand, n_cand)
        t = owner[np.repeat(starts[b], n_cand) + k]
        qu, qv = pu[pid], pv[pid]
        au, av = tu[t, 0], tv[t, 0]
        e1u, e1v = tu[t, 1] - au, tv[t, 1] - av
        e2u, e2v = tu[t, 2] - au, tv[t, 2] - av
        det = e1u * e2v - e2u * e1v
        ok = np.abs(det) > 1e-18
        det = np.where(ok, det, 1.0)
        ru, rv = qu - au, qv - av
        s = (ru * e2v - e2u * rv) / det
        r = (e1u * rv - ru * e1v) / det
        hit = ok & (s >= 0) & (r >= 0) & (s + r <= 1)
        w = tw[t, 0] + s * (tw[t, 1] - tw[t, 0]) + r * (tw[t, 2] - tw[t, 0])
        hit &= w > pw[pid]
        counts[c0:c0 + len(p)] = np.bincount(pid[hit], minlength=len(p))
    return counts


def mesh_inside(mesh: Mesh, pts) -> np.ndarray:
    """Ray-parity insideness, majority vote over rays along +x, +y and +z."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if not len(mesh.triangles):
        return np.zeros(len(pts), dtype=bool)
    votes = sum((_axis_crossings(mesh, pts, a) % 2).astype(int) for a in range(3))
    return votes >= 2


def inside(obj, pts) -> np.ndarray:
    if isinstance(obj, Mesh):
        return mesh_inside(obj, pts)
    if isinstance(obj, ShapeOracle):
        return np.asarray(obj.indicator(pts), dtype=bool)
    if isinstance(obj, OccupancyPredictor):
        return obj.occupancy(pts) > 0.5
    raise TypeError(f"cannot test insideness of {type(obj).__name__}")


def volumetric_iou(pred, gt, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Monte Carlo IoU over ``n`` uniform samples of the unit cube."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    pts = np.random.default_rng(seed).uniform(-0.5, 0.5, (n, 3))
    a, b = inside(pred, pts), inside(gt, pts)
    union = np.count_nonzero(a | b)
    if union == 0:
        raise UndefinedIoU("both shapes are empty on the sample set")
    return float(np.count_nonzero(a & b) / union)


# surface distances -----------------------------------------------------------------

def surface_samples(obj, n: int, seed: int) -> np.ndarray:
    if isinstance(obj, Mesh):
        if not len(obj.triangles) or not obj.triangle_areas().sum() > 0:
            raise EmptyMesh("mesh has no triangles")
        return obj.sample_surface(n, seed)
    if isinstance(obj, ShapeOracle):
        return obj.sample_surface(n, seed)
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or not len(pts):
        raise EmptyMesh("empty point sample")
    return pts


def _surface_scores(a: np.ndarray, b: np.ndarray, d: float | None) -> tuple[float, float]:
    """Chamfer-L1 and (when ``d`` is given) F-score between two point samples."""
    da, db = cKDTree(b).query(a)[0], cKDTree(a).query(b)[0]
    chamfer = float(0.5 * da.mean() + 0.5 * db.mean())
    if d is None:
        return chamfer, math.nan
    precision, recall = 100.0 * np.mean(da <= d), 100.0 * np.mean(db <= d)
    if precision + recall == 0:
        return chamfer, 0.0
    return chamfer, float(2 * precision * recall / (precision + recall))


def chamfer_l1(mesh_a, mesh_b, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Half the sum of mean nearest-neighbor distances in both directions.

    Both sides are sampled with the same seed, so a surface compared with
    itself scores exactly zero.
    """
    return _surface_scores(surface_samples(mesh_a, n, seed), surface_samples(mesh_b, n, seed), None)[0]


def f_score(pred_mesh, gt, d: float = DEFAULT_F_DISTANCE, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Harmonic mean of precision and recall at distance ``d``, in percent."""
    if not d > 0:
        raise ValueError("d must be positive")
    return _surface_scores(surface_samples(pred_mesh, n, seed), surface_samples(gt, n, seed), d)[1]


# reports ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    task_id: str
    iou: float
    chamfer_l1: float
    f_score: float
    n_volume: int = DEFAULT_SAMPLES
    n_surface: int = DEFAULT_SAMPLES
    seed: int = 0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @classmethod
    def failure(cls, task_id, error: str, n_volume=DEFAULT_SAMPLES, n_surface=DEFAULT_SAMPLES, seed=0):
        return cls(str(task_id), math.nan, math.nan, math.nan, n_volume, n_surface, seed, error)


def evaluate_mesh(task_id, mesh: Mesh, gt, n_volume: int = DEFAULT_SAMPLES, n_surface: int = DEFAULT_SAMPLES,
                  seed: int = 0, d: float = DEFAULT_F_DISTANCE) -> MetricsReport:
    cd, fs = _surface_scores(surface_samples(mesh, n_surface, seed), surface_samples(gt, n_surface, seed), d)
    iou = volumetric_iou(mesh, gt, n_volume, seed)
    return MetricsReport(str(task_id), iou, cd, fs, n_volume, n_surface, seed)


def summarize(reports: list[MetricsReport]) -> dict:
    ok = [r for r in reports if not r.failed]
    mean = (lambda xs: float(np.mean(xs)) if xs else math.nan)
    return {
        "iou": mean([r.iou for r in ok]),
        "chamfer": mean([r.chamfer_l1 for r in ok]),
        "fscore": mean([r.f_score for r in ok]),
        "count": len(ok),
        "failed": len(reports) - len(ok),
    }


def reports_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_id", "iou", "chamfer", "fscore"])
    for r in reports:
        w.writerow([r.task_id, repr(float(r.iou)), repr(float(r.chamfer_l1)), repr(float(r.f_score))])
    s = summarize(reports)
    w.writerow(["mean", repr(s["iou"]), repr(s["chamfer"]), repr(s["fscore"])])
    return buf.getvalue()
