"""Occupancy fields and marching-cubes mesh extraction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import EmptyMesh, EmptySurface
from .nets import NetParams, embed_forward, task_forward
from .svm_core import SvmModel, discriminant, fit

DEFAULT_RESOLUTION = 64
MIN_RESOLUTION = 8
WELD_EPS = 1e-9
UNIT_BBOX = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
_CHUNK = 32768


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class OccupancyPredictor:
    """``sigmoid(beta * P(g(q)))`` for one task.

    ``params`` and ``lam`` are the embedding context; leave them ``None`` to
    evaluate the SVM on raw coordinates.
    """

    svm: SvmModel
    params: NetParams | None = None
    lam: np.ndarray | None = None
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if (self.params is None) != (self.lam is None):
            raise ValueError("params and lam must be given together")

    def embed(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if self.params is None:
            return q
        return np.vstack([embed_forward(self.params, q[i:i + _CHUNK], self.lam)
                          for i in range(0, len(q), _CHUNK)]) if len(q) else q

    def discriminant(self, q) -> np.ndarray:
        return np.atleast_1d(discriminant(self.svm, self.embed(q)))

    def occupancy(self, q) -> np.ndarray:
        return _sigmoid(self.beta * self.discriminant(q))

    def inside(self, q) -> np.ndarray:
        return self.discriminant(q) > 0

    def with_svm(self, svm: SvmModel) -> "OccupancyPredictor":
        return OccupancyPredictor(svm, self.params, self.lam, self.beta)


def occupancy(pred: OccupancyPredictor, q) -> float | np.ndarray:
    out = pred.occupancy(q)
    return float(out[0]) if np.ndim(q) == 1 else out


def predictor_for_task(params: NetParams, descriptor=None, lam=None, tol: float = 1e-8) -> OccupancyPredictor:
    """Run the whole network for one task and fit its SVM in embedded space."""
    tf = task_forward(params, descriptor, lam)
    svm = fit(tf.embedded_train, tf.train_labels, tf.sigma, params.meta.get("C", 1.0), tol)
    return OccupancyPredictor(svm, params, tf.lam, tf.beta)


@dataclass(frozen=True)
class ScalarField:
    resolution: int
    bbox: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.resolution,) * 3:
            raise ValueError("values must be resolution^3")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = (np.asarray(b, dtype=float) for b in self.bbox)
        return (hi - lo) / (self.resolution - 1)


def lattice_axes(resolution: int, bbox=UNIT_BBOX) -> list[np.ndarray]:
    lo, hi = bbox
    return [np.linspace(lo[d], hi[d], resolution) for d in range(3)]


def lattice_points(resolution: int, bbox=UNIT_BBOX) -> np.ndarray:
    ax = lattice_axes(resolution, bbox)
    return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)


def sample_field(fn, resolution: int, bbox=UNIT_BBOX) -> ScalarField:
    """Evaluate ``fn`` (points -> values) on the lattice of cell corners."""
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION}")
    bbox = tuple(tuple(float(v) for v in b) for b in bbox)
    pts = lattice_points(resolution, bbox)
    vals = np.concatenate([np.asarray(fn(pts[i:i + _CHUNK]), dtype=float).reshape(-1)
                           for i in range(0, len(pts), _CHUNK)])
    return ScalarField(resolution, bbox, vals.reshape((resolution,) * 3))


def predict_grid(pred: OccupancyPredictor, resolution: int = DEFAULT_RESOLUTION, bbox=UNIT_BBOX) -> ScalarField:
    return sample_field(pred.discriminant, resolution, bbox)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return np.cross(b - a, c - a)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and how many triangles use each."""
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def is_watertight(self) -> bool:
        _, counts = self.edges()
        return bool(len(counts)) and bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        edges, _ = self.edges()
        used = len(np.unique(self.triangles))
        return int(used - len(edges) + len(self.triangles))

    def sample_surface(self, count: int, seed: int = 0) -> np.ndarray:
        """Area-weighted uniform samples.

        Triangles and their corners are put in a canonical order first, so
        the result does not depend on how the mesh happens to be indexed.
        """
        corners = self.vertices[self.triangles]  # (F, 3, 3)
        within = np.lexsort(corners.transpose(2, 0, 1)[::-1], axis=-1) if len(corners) else None
        if within is not None:
            corners = np.take_along_axis(corners, within[:, :, None], axis=1)
            corners = corners[np.lexsort(corners.reshape(len(corners), 9).T[::-1])]
        a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        total = areas.sum()
        if not total > 0:
            raise EmptyMesh("mesh has no area")
        rng = np.random.default_rng(seed)
        tri = rng.choice(len(areas), size=count, p=areas / total)
        r1, r2 = rng.random(count), rng.random(count)
        s = np.sqrt(r1)
        return (1 - s)[:, None] * a[tri] + (s * (1 - r2))[:, None] * b[tri] + (s * r2)[:, None] * c[tri]

    def to_obj(self) -> str:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist()]
        lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_obj(cls, text: str) -> "Mesh":
        verts, faces = [], []
        for ln in text.splitlines():
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                faces += [[idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1)]
        return cls(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _boundary_crossed(values: np.ndarray, iso: float) -> bool:
    faces = [values[0], values[-1], values[:, 0], values[:, -1], values[:, :, 0], values[:, :, -1]]
    below = np.concatenate([(f < iso).ravel() for f in faces])
    return bool(below.any() and not below.all())


def marching_cubes(field: ScalarField, iso: float = 0.0) -> Mesh:
    """Extract the ``iso`` level set; normals point toward decreasing field values.

    Vertices are shared between cells through their lattice edge, so a
    surface that stays inside the box comes out closed.
    """
    vals = np.ascontiguousarray(field.values, dtype=float)
    below = vals < iso
    if below.all() or not below.any():
        raise EmptySurface(f"field never crosses iso level {iso}")
    if _boundary_crossed(vals, iso):
        warnings.warn("surface touches the bounding box; mesh will be open", RuntimeWarning, stacklevel=2)
    keys = _backend.mc_triangles(vals, float(iso))
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    n = field.resolution
    axis = uniq % 3
    cell = uniq // 3
    ix, iy, iz = cell // (n * n), (cell // n) % n, cell % n
    start = np.stack([ix, iy, iz], axis=1)
    end = start + np.eye(3, dtype=np.int64)[axis]
    v0 = vals[start[:, 0], start[:, 1], start[:, 2]]
    v1 = vals[end[:, 0], end[:, 1], end[:, 2]]
    t = (iso - v0) / (v1 - v0)
    lo = np.asarray(field.bbox[0], dtype=float)
    h = field.spacing
    pos = lo + (start + t[:, None] * (end - start)) * h
    tris = inverse.reshape(-1, 3)
    # Corner values equal to iso put vertices from different edges on the same spot.
    _, weld = np.unique(np.round(pos / WELD_EPS).astype(np.int64), axis=0, return_inverse=True)
    weld = weld.reshape(-1)
    tris = weld[tris]
    first = np.full(weld.max() + 1, len(weld))
    np.minimum.at(first, weld, np.arange(len(weld)))
    verts = pos[first]
    # Only triangles collapsed by welding are dropped: removing a thin sliver
    # with three distinct vertices would open a hole next to it.
    tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    used = np.unique(tris)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    if not len(used):
        raise EmptySurface("all triangles were degenerate")
    # The case table already winds triangles so normals face the "below" side.
    return Mesh(verts[used], remap[tris])


def reconstruct(params: NetParams, descriptor=None, resolution: int = DEFAULT_RESOLUTION, lam=None,
                bbox=UNIT_BBOX, iso: float = 0.0) -> Mesh:
    pred = predictor_for_task(params, descriptor, lam)
    return marching_cubes(predict_grid(pred, resolution, bbox), iso)


__all__ = [
    "OccupancyPredictor", "ScalarField", "Mesh", "occupancy", "predict_grid", "marching_cubes",
    "reconstruct", "predictor_for_task", "sample_field",
]
