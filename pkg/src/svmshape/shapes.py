"""Procedural ground-truth shapes.

Every shape lives inside the normalized domain ``[-0.5, 0.5]^3`` and answers
exact occupancy and signed-distance queries.  The samplers build the labeled
test sets used by the outer training loss and by the evaluation metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidSpec, SamplingStalled

KINDS = ("sphere", "box", "ellipsoid", "torus", "union-of-two", "difference-of-two")
DESCRIPTOR_SIZE = 16
DOMAIN_HALF = 0.5
MARGIN = 0.02
SURFACE_TOL = 1e-6

_PARAM_COUNT = {
    "sphere": 4,             # cx cy cz r
    "box": 6,                # cx cy cz hx hy hz
    "ellipsoid": 6,          # cx cy cz ax ay az
    "torus": 5,              # cx cy cz R r (axis along z)
    "union-of-two": 8,       # sphere a (c, r), sphere b (c, r)
    "difference-of-two": 8,  # sphere a minus sphere b
}

SVM_PM1 = "svm_pm1"
OCCUPANCY_01 = "occupancy_01"


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))

    @classmethod
    def sphere(cls, radius, center=(0.0, 0.0, 0.0)):
        return cls("sphere", (*center, radius))

    @classmethod
    def box(cls, half_extents, center=(0.0, 0.0, 0.0)):
        return cls("box", (*center, *half_extents))

    @classmethod
    def ellipsoid(cls, radii, center=(0.0, 0.0, 0.0)):
        return cls("ellipsoid", (*center, *radii))

    @classmethod
    def torus(cls, major_radius, minor_radius, center=(0.0, 0.0, 0.0)):
        return cls("torus", (*center, major_radius, minor_radius))

    @classmethod
    def union(cls, a_center, a_radius, b_center, b_radius):
        return cls("union-of-two", (*a_center, a_radius, *b_center, b_radius))

    @classmethod
    def difference(cls, a_center, a_radius, b_center, b_radius):
        return cls("difference-of-two", (*a_center, a_radius, *b_center, b_radius))

    # key-value text form ------------------------------------------------

    def to_items(self) -> list[tuple[str, str]]:
        p = self.params
        fmt = lambda vals: ",".join(repr(float(v)) for v in vals)
        items = [("kind", self.kind)]
        if self.kind == "sphere":
            items += [("center", fmt(p[:3])), ("radius", repr(p[3]))]
        elif self.kind == "box":
            items += [("center", fmt(p[:3])), ("half_extents", fmt(p[3:6]))]
        elif self.kind == "ellipsoid":
            items += [("center", fmt(p[:3])), ("radii", fmt(p[3:6]))]
        elif self.kind == "torus":
            items += [("center", fmt(p[:3])), ("major_radius", repr(p[3])),
                      ("minor_radius", repr(p[4]))]
        else:
            items += [("a_center", fmt(p[:3])), ("a_radius", repr(p[3])),
                      ("b_center", fmt(p[4:7])), ("b_radius", repr(p[7]))]
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ShapeSpec":
        try:
            kind = items["kind"]
            vec = lambda key: [float(v) for v in items[key].split(",")]
            center = vec("center") if "center" in items else [0.0, 0.0, 0.0]
            if kind == "sphere":
                params = center + [float(items["radius"])]
            elif kind == "box":
                params = center + vec("half_extents")
            elif kind == "ellipsoid":
                params = center + vec("radii")
            elif kind == "torus":
                params = center + [float(items["major_radius"]), float(items["minor_radius"])]
            elif kind in ("union-of-two", "difference-of-two"):
                params = (vec("a_center") + [float(items["a_radius"])]
                          + vec("b_center") + [float(items["b_radius"])])
            else:
                raise InvalidSpec(f"unknown shape kind {kind!r}")
        except KeyError as exc:
            raise InvalidSpec(f"missing shape key {exc.args[0]!r}") from None
        except ValueError as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(str(exc)) from None
        return cls(kind, params)


def _check_extent(lo, hi, what):
    limit = DOMAIN_HALF - MARGIN
    if np.any(np.asarray(lo) < -limit - 1e-12) or np.any(np.asarray(hi) > limit + 1e-12):
        raise InvalidSpec(f"{what} leaves the unit cube margin of {MARGIN}")


def validate_spec(spec: ShapeSpec) -> None:
    if spec.kind not in KINDS:
        raise InvalidSpec(f"unknown shape kind {spec.kind!r}")
    p = np.asarray(spec.params, dtype=float)
    if p.size != _PARAM_COUNT[spec.kind]:
        raise InvalidSpec(f"{spec.kind} takes {_PARAM_COUNT[spec.kind]} params, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise InvalidSpec("shape params must be finite")
    c = p[:3]
    if spec.kind == "sphere":
        if p[3] <= 0:
            raise InvalidSpec("radius must be positive")
        _check_extent(c - p[3], c + p[3], "sphere")
    elif spec.kind in ("box", "ellipsoid"):
        if np.any(p[3:6] <= 0):
            raise InvalidSpec("extents must be positive")
        _check_extent(c - p[3:6], c + p[3:6], spec.kind)
    elif spec.kind == "torus":
        big, small = p[3], p[4]
        if not 0 < small < big:
            raise InvalidSpec("torus needs 0 < minor_radius < major_radius")
        ext = np.array([big + small, big + small, small])
        _check_extent(c - ext, c + ext, "torus")
    else:
        for k, (cc, r) in enumerate(((p[0:3], p[3]), (p[4:7], p[7]))):
            if r <= 0:
                raise InvalidSpec("radius must be positive")
            _check_extent(cc - r, cc + r, f"child {'ab'[k]}")


def _as_points(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


def _sphere_sdf(x, c, r):
    return np.linalg.norm(x - c, axis=1) - r


def _bisect_root(z, r, g, iters=160):
    """Root ``s`` of ``sum((r*z / (s + r))**2) = 1`` bracketed as in Eberly's method."""
    n = r * z
    s0 = z[:, -1] - 1.0
    s1 = np.where(g < 0, 0.0, np.linalg.norm(n, axis=1) - 1.0)
    s = 0.5 * (s0 + s1)
    for _ in range(iters):
        s = 0.5 * (s0 + s1)
        val = np.sum((n / (s[:, None] + r)) ** 2, axis=1) - 1.0
        s0 = np.where(val > 0, s, s0)
        s1 = np.where(val < 0, s, s1)
        done = val == 0
        s0 = np.where(done, s, s0)
        s1 = np.where(done, s, s1)
    return s


def _ellipse_distance(y, e):
    """Distance from first-quadrant points ``y`` (M,2) to the ellipse ``e0 >= e1``."""
    e0, e1 = e
    out = np.empty(len(y))
    on_axis = y[:, 1] <= 0
    gen = ~on_axis
    if np.any(gen):
        z = y[gen] / e
        g = np.sum(z * z, axis=1) - 1.0
        r = np.array([(e0 / e1) ** 2, 1.0])
        s = _bisect_root(z, r, g)
        x = r * y[gen] / (s[:, None] + r)
        out[gen] = np.linalg.norm(x - y[gen], axis=1)
    if np.any(on_axis):
        y0 = y[on_axis, 0]
        den = e0 * e0 - e1 * e1
        inner = e0 * y0 < den
        xde = np.where(inner, e0 * y0 / np.where(den > 0, den, 1.0), 1.0)
        x0 = e0 * xde
        x1 = np.where(inner, e1 * np.sqrt(np.clip(1.0 - xde * xde, 0.0, None)), 0.0)
        out[on_axis] = np.hypot(x0 - y0, x1)
    return out


def _ellipsoid_distance(y, radii):
    """Unsigned distance to an axis-aligned ellipsoid (Eberly's robust algorithm)."""
    order = np.argsort(-radii, kind="stable")
    e = radii[order]
    y = np.abs(y[:, order])
    out = np.empty(len(y))
    gen = y[:, 2] > 0
    if np.any(gen):
        z = y[gen] / e
        g = np.sum(z * z, axis=1) - 1.0
        r = (e / e[2]) ** 2
        s = _bisect_root(z, r, g)
        x = r * y[gen] / (s[:, None] + r)
        out[gen] = np.linalg.norm(x - y[gen], axis=1)
    flat = ~gen
    if np.any(flat):
        yf = y[flat]
        d0, d1 = e[0] ** 2 - e[2] ** 2, e[1] ** 2 - e[2] ** 2
        n0, n1 = e[0] * yf[:, 0], e[1] * yf[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            xde0 = np.where(n0 < d0, n0 / d0, np.inf)
            xde1 = np.where(n1 < d1, n1 / d1, np.inf)
            discr = 1.0 - xde0 ** 2 - xde1 ** 2
        interior = (n0 < d0) & (n1 < d1) & (discr > 0)
        res = np.empty(len(yf))
        if np.any(interior):
            x0 = e[0] * xde0[interior]
            x1 = e[1] * xde1[interior]
            x2 = e[2] * np.sqrt(discr[interior])
            res[interior] = np.sqrt((x0 - yf[interior, 0]) ** 2
                                    + (x1 - yf[interior, 1]) ** 2 + x2 ** 2)
        rest = ~interior
        if np.any(rest):
            res[rest] = _ellipse_distance(yf[rest][:, :2], e[:2])
        out[flat] = res
    return out


@dataclass(frozen=True)
class ShapeOracle:
    """Analytic shape with exact queries; build through :func:`make_shape`."""

    spec: ShapeSpec
    descriptor: np.ndarray = field(repr=False, compare=False)

    def signed_distance(self, p):
        """Signed distance, negative inside.

        Exact for the primitives.  For CSG shapes the union uses the min of the
        child distances and the difference ``max(a, -b)``; the latter is a lower
        bound on the true distance away from the surface.
        """
        x, single = _as_points(p)
        prm = np.asarray(self.spec.params)
        kind = self.spec.kind
        c = prm[:3]
        if kind == "sphere":
            d = _sphere_sdf(x, c, prm[3])
        elif kind == "box":
            q = np.abs(x - c) - prm[3:6]
            d = (np.linalg.norm(np.maximum(q, 0.0), axis=1)
                 + np.minimum(q.max(axis=1), 0.0))
        elif kind == "ellipsoid":
            y = x - c
            implicit = np.sum((y / prm[3:6]) ** 2, axis=1) - 1.0
            d = np.sign(implicit) * _ellipsoid_distance(y, prm[3:6])
        elif kind == "torus":
            y = x - c
            q = np.hypot(np.hypot(y[:, 0], y[:, 1]) - prm[3], y[:, 2])
            d = q - prm[4]
        else:
            da = _sphere_sdf(x, prm[0:3], prm[3])
            db = _sphere_sdf(x, prm[4:7], prm[7])
            d = np.minimum(da, db) if kind == "union-of-two" else np.maximum(da, -db)
        return float(d[0]) if single else d

    def indicator(self, p):
        """Occupancy in {0, 1}; points on the surface count as inside."""
        d = self.signed_distance(p)
        if np.ndim(d) == 0:
            return int(d <= 0)
        return (d <= 0).astype(np.int64)

    # sampling ----------------------------------------------------------

    def sample_uniform(self, count: int, seed: int) -> "LabeledPointSet":
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-DOMAIN_HALF, DOMAIN_HALF, size=(count, 3))
        return LabeledPointSet(pts, self.indicator(pts), OCCUPANCY_01)

    def sample_near_surface(self, count: int, noise_std: float = 0.05, seed: int = 0) -> "LabeledPointSet":
        if noise_std <= 0:
            raise ValueError("noise_std must be positive")
        rng = np.random.default_rng(seed)
        surf = self._sample_surface(count, rng)
        pts = np.clip(surf + rng.normal(0.0, noise_std, size=surf.shape), -DOMAIN_HALF, DOMAIN_HALF)
        return LabeledPointSet(pts, self.indicator(pts), OCCUPANCY_01)

    def sample_surface(self, count: int, seed: int) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        return self._sample_surface(count, np.random.default_rng(seed))

    def _sample_surface(self, count, rng):
        prm = np.asarray(self.spec.params)
        kind = self.spec.kind
        c = prm[:3]
        if kind == "sphere":
            return c + prm[3] * _unit_vectors(rng, count)
        if kind == "box":
            return c + _box_surface(rng, count, prm[3:6])
        if kind == "ellipsoid":
            return c + _ellipsoid_surface(rng, count, prm[3:6])
        if kind == "torus":
            return c + _torus_surface(rng, count, prm[3], prm[4])
        return self._csg_surface(rng, count, prm)

    def _csg_surface(self, rng, count, prm):
        centers = (prm[0:3], prm[4:7])
        radii = np.array([prm[3], prm[7]])
        weights = radii ** 2 / np.sum(radii ** 2)
        chunks, have, proposed = [], 0, 0
        while have < count:
            batch = max(4096, 2 * (count - have))
            which = rng.choice(2, size=batch, p=weights)
            pts = _unit_vectors(rng, batch) * radii[which, None]
            pts += np.where(which[:, None] == 0, centers[0], centers[1])
            ok = np.abs(self.signed_distance(pts)) <= SURFACE_TOL
            proposed += batch
            chunks.append(pts[ok])
            have += int(ok.sum())
            if proposed >= 1_000_000 and have < 1e-3 * proposed:
                raise SamplingStalled(f"acceptance {have}/{proposed} below 0.1%")
        return np.concatenate(chunks)[:count]


def _unit_vectors(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box_surface(rng, count, h):
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * h
    side = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    pts[np.arange(count), axis] = side * h[axis]
    return pts


def _ellipsoid_surface(rng, count, e):
    # Area element of the sphere-to-ellipsoid map is prod(e) * |u / e|.
    chunks, have = [], 0
    while have < count:
        u = _unit_vectors(rng, max(1024, 2 * (count - have)))
        accept = rng.random(len(u)) < np.linalg.norm(u / e, axis=1) * e.min()
        chunks.append(u[accept] * e)
        have += int(accept.sum())
    return np.concatenate(chunks)[:count]


def _torus_surface(rng, count, big, small):
    chunks, have = [], 0
    while have < count:
        n = max(1024, 2 * (count - have))
        v = rng.uniform(0.0, 2 * math.pi, n)
        accept = rng.random(n) < (big + small * np.cos(v)) / (big + small)
        chunks.append(v[accept])
        have += int(accept.sum())
    v = np.concatenate(chunks)[:count]
    u = rng.uniform(0.0, 2 * math.pi, count)
    ring = big + small * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)


def shape_descriptor(spec: ShapeSpec) -> np.ndarray:
    """Fixed-length task input: one-hot kind followed by zero-padded params."""
    d = np.zeros(DESCRIPTOR_SIZE)
    d[KINDS.index(spec.kind)] = 1.0
    d[len(KINDS):len(KINDS) + len(spec.params)] = spec.params
    return d


def make_shape(spec: ShapeSpec) -> ShapeOracle:
    validate_spec(spec)
    desc = shape_descriptor(spec)
    desc.setflags(write=False)
    return ShapeOracle(spec, desc)


@dataclass(frozen=True)
class LabeledPointSet:
    points: np.ndarray
    labels: np.ndarray
    label_convention: str = SVM_PM1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        lab = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if len(pts) != len(lab):
            raise ValueError("points and labels differ in length")
        allowed = {-1, 1} if self.label_convention == SVM_PM1 else {0, 1}
        if self.label_convention not in (SVM_PM1, OCCUPANCY_01):
            raise ValueError(f"unknown label convention {self.label_convention!r}")
        if not set(np.unique(lab).tolist()) <= allowed:
            raise ValueError(f"labels outside {sorted(allowed)} for {self.label_convention}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.labels)

    def to_svm(self) -> "LabeledPointSet":
        if self.label_convention == SVM_PM1:
            return self
        return LabeledPointSet(self.points, 2 * self.labels - 1, SVM_PM1)

    def to_occupancy(self) -> "LabeledPointSet":
        if self.label_convention == OCCUPANCY_01:
            return self
        return LabeledPointSet(self.points, (self.labels + 1) // 2, OCCUPANCY_01)

    def concat(self, other: "LabeledPointSet") -> "LabeledPointSet":
        if other.label_convention != self.label_convention:
            other = other.to_svm() if self.label_convention == SVM_PM1 else other.to_occupancy()
        return LabeledPointSet(np.vstack([self.points, other.points]),
                               np.concatenate([self.labels, other.labels]),
                               self.label_convention)


# random families used for desk-scale meta-training --------------------------

FAMILIES = ("sphere", "box", "ellipsoid", "torus", "union", "difference",
            "ellipsoid_box", "mixed")


def _jitter(rng, extent, scale=0.06):
    room = np.clip(DOMAIN_HALF - MARGIN - 0.01 - np.asarray(extent), 0.0, scale)
    return rng.uniform(-1.0, 1.0, 3) * room


def random_spec(family: str, rng: np.random.Generator) -> ShapeSpec:
    if family == "ellipsoid_box":
        family = ("ellipsoid", "box")[int(rng.integers(2))]
    elif family == "mixed":
        family = FAMILIES[int(rng.integers(6))]
    if family == "sphere":
        r = rng.uniform(0.15, 0.4)
        return ShapeSpec.sphere(r, _jitter(rng, [r] * 3))
    if family == "ellipsoid":
        radii = rng.uniform(0.12, 0.4, 3)
        return ShapeSpec.ellipsoid(radii, _jitter(rng, radii))
    if family == "box":
        half = rng.uniform(0.12, 0.35, 3)
        return ShapeSpec.box(half, _jitter(rng, half))
    if family == "torus":
        big = rng.uniform(0.2, 0.3)
        small = rng.uniform(0.06, min(0.12, 0.45 - big))
        return ShapeSpec.torus(big, small, _jitter(rng, [big + small, big + small, small], 0.03))
    if family in ("union", "difference"):
        if family == "union":
            ra, rb = rng.uniform(0.15, 0.25, 2)
            gap = rng.uniform(0.08, 0.2)
        else:
            ra, rb = rng.uniform(0.3, 0.38), rng.uniform(0.12, 0.2)
            gap = rng.uniform(ra - 0.5 * rb, ra)
        u = _unit_vectors(rng, 1)[0]
        ca, cb = -0.5 * gap * u, 0.5 * gap * u
        if family == "difference":
            ca, cb = np.zeros(3), gap * u
        limit = DOMAIN_HALF - MARGIN - 0.005
        shrink = min(1.0, limit / (np.abs(cb).max() + rb), limit / (np.abs(ca).max() + ra))
        return ShapeSpec(
            "union-of-two" if family == "union" else "difference-of-two",
            (*(ca * shrink), ra * shrink, *(cb * shrink), rb * shrink),
        )
    raise InvalidSpec(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def random_family(family: str, count: int, seed: int) -> list[ShapeSpec]:
    rng = np.random.default_rng(seed)
    specs = [random_spec(family, rng) for _ in range(count)]
    for s in specs:
        validate_spec(s)
    return specs


def oracles(specs: Iterable[ShapeSpec]) -> list[ShapeOracle]:
    return [make_shape(s) for s in specs]
