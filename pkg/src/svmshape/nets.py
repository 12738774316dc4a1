"""Feature, PointGen and Embedding networks plus the learned sigmoid scale.

The feature network stands in for an image encoder: it maps the 16-value
shape descriptor to the 256-d task feature ``lambda``.  PointGen decodes
``lambda`` into ``N`` labeled points (first half +1, second half -1) and a
kernel bandwidth.  The embedding network warps space conditioned on
``lambda`` as ``g(x) = x + mlp(x, lambda)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .shapes import DESCRIPTOR_SIZE
from .svm_core import ANISOTROPIC, ISOTROPIC, SIGMA_FLOOR, KernelParams

FEATURE_DIM = 256
EMBED_WIDTH = 128
POINTGEN_WIDTH = 256
INIT_SIGMA = 0.15
INIT_BETA = 5.0
INNER_RADIUS = 0.2
OUTER_RADIUS = 0.42
REFERENCE_POINTS = 32


def softplus_inverse(y: float) -> float:
    return float(y + math.log(-math.expm1(-y)))


def canonical_mode(mode: str) -> str:
    mode = {"iso": ISOTROPIC, "aniso": ANISOTROPIC}.get(mode, mode)
    if mode not in (ISOTROPIC, ANISOTROPIC):
        raise ValueError(f"unknown kernel mode {mode!r}")
    return mode


def sigma_dim(mode: str) -> int:
    return 1 if canonical_mode(mode) == ISOTROPIC else 3


def inner_radius(n_points: int) -> float:
    # Keep the spacing between positive start points fixed as N changes; a
    # sparser inner shell pushes every multiplier to C, leaving no gradient.
    return INNER_RADIUS * math.sqrt(n_points / REFERENCE_POINTS)


def fibonacci_sphere(n: int, radius: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = math.pi * (1.0 + 5 ** 0.5) * i
    return radius * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


@dataclass
class NetParams:
    """All trainable weights, stored as named float64 arrays."""

    arrays: dict
    n_points: int
    kernel_mode: str = ANISOTROPIC
    beta_per_shape: bool = False
    use_embedding: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_points < 2 or self.n_points % 2:
            raise ValueError("n_points must be a positive even number")
        self.kernel_mode = canonical_mode(self.kernel_mode)

    @property
    def labels(self) -> np.ndarray:
        half = self.n_points // 2
        return np.array([1] * half + [-1] * half, dtype=np.int64)

    @property
    def beta(self) -> float:
        return float(np.logaddexp(0.0, self.arrays["beta"][0]))

    def trainable(self) -> list[str]:
        names = sorted(self.arrays)
        if not self.use_embedding:
            names = [n for n in names if not n.startswith("emb.")]
        return names

    def bind(self, tape: ad.Tape | None = None) -> dict:
        if tape is None:
            return {k: ad.constant(v) for k, v in self.arrays.items()}
        train = set(self.trainable())
        return {k: tape.leaf(v, k) if k in train else ad.constant(v) for k, v in self.arrays.items()}

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.arrays.items()}, self.n_points, self.kernel_mode,
                         self.beta_per_shape, self.use_embedding, dict(self.meta))

    def head_size(self) -> int:
        return 3 * self.n_points + sigma_dim(self.kernel_mode) + int(self.beta_per_shape)


def init_params(n_points: int = 32, kernel_mode: str = ANISOTROPIC, seed: int = 0,
                use_embedding: bool = True, beta_per_shape: bool = False) -> NetParams:
    """He-initialized weights with a PointGen bias that starts from two nested spheres.

    Positive points start on a sphere of radius ``0.2 * sqrt(N / 32)`` and
    negatives on one of radius 0.42, so the very first SVM fit already
    separates the labels with some multipliers strictly inside ``(0, C)``.  The
    embedding's output layer starts at zero, making ``g`` the identity.
    """
    rng = np.random.default_rng(seed)
    p = NetParams({}, n_points, kernel_mode, beta_per_shape, use_embedding)

    def dense(fan_in, fan_out, gain=2.0):
        return rng.normal(0.0, math.sqrt(gain / fan_in), (fan_in, fan_out))

    a = p.arrays
    a["feat.W1"], a["feat.b1"] = dense(DESCRIPTOR_SIZE, FEATURE_DIM), np.zeros(FEATURE_DIM)
    a["feat.W2"], a["feat.b2"] = dense(FEATURE_DIM, FEATURE_DIM), np.zeros(FEATURE_DIM)
    a["pg.W1"], a["pg.b1"] = dense(FEATURE_DIM, POINTGEN_WIDTH), np.zeros(POINTGEN_WIDTH)
    head = p.head_size()
    a["pg.W2"] = dense(POINTGEN_WIDTH, head, gain=1e-4)
    half = n_points // 2
    start = np.vstack([fibonacci_sphere(half, inner_radius(n_points)), fibonacci_sphere(n_points - half, OUTER_RADIUS)])
    b2 = np.zeros(head)
    b2[: 3 * n_points] = np.arctanh(2.0 * start).reshape(-1)
    sd = sigma_dim(kernel_mode)
    b2[3 * n_points: 3 * n_points + sd] = softplus_inverse(INIT_SIGMA - SIGMA_FLOOR)
    if beta_per_shape:
        b2[-1] = softplus_inverse(INIT_BETA)
    a["pg.b2"] = b2
    a["emb.W1"], a["emb.b1"] = dense(3 + FEATURE_DIM, EMBED_WIDTH), np.zeros(EMBED_WIDTH)
    a["emb.W2"], a["emb.b2"] = dense(EMBED_WIDTH, EMBED_WIDTH), np.zeros(EMBED_WIDTH)
    a["emb.W3"], a["emb.b3"] = np.zeros((EMBED_WIDTH, 3)), np.zeros(3)
    a["beta"] = np.array([softplus_inverse(INIT_BETA)])
    return p


# tape-level building blocks -------------------------------------------------------

def feature_net(w: dict, descriptor) -> ad.Tensor:
    h = ad.relu(ad.add(ad.matmul(descriptor, w["feat.W1"]), w["feat.b1"]))
    return ad.add(ad.matmul(h, w["feat.W2"]), w["feat.b2"])


def pointgen_net(w: dict, lam: ad.Tensor, n_points: int, kernel_mode: str, beta_per_shape: bool = False):
    """Return ``(points N x 3, sigma, beta_raw or None)`` as tensors."""
    h = ad.relu(ad.add(ad.matmul(lam, w["pg.W1"]), w["pg.b1"]))
    out = ad.add(ad.matmul(h, w["pg.W2"]), w["pg.b2"])
    n3 = 3 * n_points
    sd = sigma_dim(kernel_mode)
    pts = ad.scale(0.5, ad.tanh(ad.reshape(ad.take(out, slice(0, n3)), (n_points, 3))))
    raw_sigma = ad.take(out, slice(n3, n3 + sd))
    sigma = ad.add(ad.softplus(raw_sigma), ad.constant(np.full(sd, SIGMA_FLOOR)))
    beta_raw = ad.take(out, slice(n3 + sd, n3 + sd + 1)) if beta_per_shape else None
    return pts, sigma, beta_raw


def embed_net(w: dict, x: ad.Tensor, lam: ad.Tensor) -> ad.Tensor:
    """``x + mlp([x, lambda])`` for a batch ``x`` of shape (M, 3).

    The first layer's weight is split into the rows that see ``x`` and those
    that see ``lambda``, which equals concatenating ``lambda`` to every row.
    """
    w1x = ad.take(w["emb.W1"], slice(0, 3))
    w1l = ad.take(w["emb.W1"], slice(3, None))
    row = ad.add(ad.matmul(lam, w1l), w["emb.b1"])
    h = ad.relu(ad.add_bias(ad.matmul(x, w1x), row))
    h = ad.relu(ad.add_bias(ad.matmul(h, w["emb.W2"]), w["emb.b2"]))
    return ad.add(x, ad.add_bias(ad.matmul(h, w["emb.W3"]), w["emb.b3"]))


def beta_tensor(w: dict, beta_raw: ad.Tensor | None) -> ad.Tensor:
    return ad.softplus(beta_raw if beta_raw is not None else w["beta"])


# numpy-level API -----------------------------------------------------------------

def feature_forward(params: NetParams, descriptor) -> np.ndarray:
    d = np.asarray(descriptor, dtype=float)
    if d.shape != (DESCRIPTOR_SIZE,) or not np.all(np.isfinite(d)):
        raise ValueError(f"descriptor must be {DESCRIPTOR_SIZE} finite values")
    return feature_net(params.bind(), d).data


def pointgen_forward(params: NetParams, lam) -> tuple[np.ndarray, np.ndarray, KernelParams]:
    pts, sigma, _ = pointgen_net(params.bind(), ad.constant(lam), params.n_points, params.kernel_mode,
                                 params.beta_per_shape)
    return pts.data, params.labels, KernelParams(params.kernel_mode, sigma.data)


def embed_forward(params: NetParams, x, lam) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    out = embed_net(params.bind(), ad.constant(np.atleast_2d(arr)), ad.constant(lam)).data
    return out[0] if single else out


def task_beta(params: NetParams, lam) -> float:
    if not params.beta_per_shape:
        return params.beta
    _, _, raw = pointgen_net(params.bind(), ad.constant(lam), params.n_points, params.kernel_mode, True)
    return float(np.logaddexp(0.0, raw.data[0]))


def interpolate_features(l1, l2, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return (1.0 - t) * np.asarray(l1, dtype=float) + t * np.asarray(l2, dtype=float)


@dataclass(frozen=True)
class TaskForward:
    lam: np.ndarray
    train_points: np.ndarray
    train_labels: np.ndarray
    sigma: KernelParams
    embedded_train: np.ndarray
    beta: float


def task_forward(params: NetParams, descriptor=None, lam=None) -> TaskForward:
    """Run feature -> PointGen -> embedding for one task without recording gradients."""
    if lam is None:
        lam = feature_forward(params, descriptor)
    pts, labels, kernel = pointgen_forward(params, lam)
    emb = embed_forward(params, pts, lam)
    return TaskForward(np.asarray(lam), pts, labels, kernel, emb, task_beta(params, lam))


# checkpoint text -------------------------------------------------------------------

CHECKPOINT_MAGIC = "svmshape-checkpoint"
CHECKPOINT_VERSION = 1


def format_arrays(prefix: str, arrays: dict) -> list[str]:
    lines = []
    for name in sorted(arrays):
        v = np.asarray(arrays[name], dtype=float)
        lines.append(f"array {prefix}{name} {' '.join(str(s) for s in v.shape)}")
        rows = v.reshape(v.shape[0], -1) if v.ndim > 1 else v.reshape(1, -1)
        lines.extend(" ".join(repr(float(x)) for x in row) for row in rows)
    return lines


def parse_arrays(lines: list[str]) -> dict:
    out, i = {}, 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "array":
            raise ValueError(f"expected array header, got {lines[i]!r}")
        name, shape = parts[1], tuple(int(s) for s in parts[2:])
        nrows = shape[0] if len(shape) > 1 else 1
        vals = [float(x) for ln in lines[i + 1:i + 1 + nrows] for x in ln.split()]
        out[name] = np.array(vals, dtype=float).reshape(shape)
        i += 1 + nrows
    return out
