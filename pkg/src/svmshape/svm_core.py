"""Gaussian kernels and the dual kernel SVM.

The dual problem over multipliers ``alpha`` is

    minimize   0.5 * sum_ij alpha_i alpha_j y_i y_j K(x_i, x_j) - sum_i alpha_i
    subject to sum_i alpha_i y_i = 0,  0 <= alpha_i <= C

and the fitted discriminant is ``P(q) = sum_i alpha_i y_i K(x_i, q) + b``.
:func:`solve_dual` runs SMO with second-order working-set selection and then
polishes the result by solving the equality-constrained system on the final
active set.  :func:`brute_force_dual` enumerates every active set and is the
independent oracle for small problems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import NoConvergence, SingleClass, TooLarge
from .shapes import SVM_PM1, LabeledPointSet

ISOTROPIC = "isotropic"
ANISOTROPIC = "anisotropic"
SIGMA_FLOOR = 1e-4
DEFAULT_TOL = 1e-8
MAX_ITER = 100_000
MODEL_MAGIC = "svmshape-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class KernelParams:
    mode: str
    sigma: np.ndarray

    def __post_init__(self):
        mode = {"iso": ISOTROPIC, "aniso": ANISOTROPIC}.get(self.mode, self.mode)
        if mode not in (ISOTROPIC, ANISOTROPIC):
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        sigma = np.array(self.sigma, dtype=float).reshape(-1)
        want = 1 if mode == ISOTROPIC else 3
        if sigma.size == 1 and want == 3:
            sigma = np.repeat(sigma, 3)
        if sigma.size != want:
            raise ValueError(f"{mode} kernel needs {want} sigma values, got {sigma.size}")
        if not np.all(np.isfinite(sigma)) or np.any(sigma < SIGMA_FLOOR):
            raise ValueError(f"sigma must be finite and >= {SIGMA_FLOOR}")
        sigma.setflags(write=False)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "sigma", sigma)

    def inverse_scales(self) -> np.ndarray:
        """Per-axis weights ``w`` with ``K(a, b) = exp(-sum_d w_d (a_d - b_d)^2)``."""
        if self.mode == ISOTROPIC:
            return np.full(3, 1.0 / (2.0 * self.sigma[0] ** 2))
        return 1.0 / self.sigma ** 2


def kernel_matrix(a, b, k: KernelParams) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    w = k.inverse_scales()
    d2 = np.zeros((len(a), len(b)))
    for ax in range(3):
        diff = a[:, ax, None] - b[None, :, ax]
        d2 += w[ax] * diff * diff
    return np.exp(-d2)


def kernel_eval(a, b, k: KernelParams) -> float:
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    # Squares are symmetric in (a, b), so K(a, b) == K(b, a) bit for bit.
    return float(np.exp(-np.sum(k.inverse_scales() * diff * diff)))


def gram_matrix(points, k: KernelParams) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("gram_matrix needs at least two points")
    g = kernel_matrix(pts, pts, k)
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 1.0)
    return g


@dataclass(frozen=True)
class SvmModel:
    support_points: np.ndarray
    labels: np.ndarray
    alpha: np.ndarray
    bias: float
    C: float
    kernel: KernelParams
    kkt_residual: float
    iterations: int = field(default=0, compare=False)

    def discriminant(self, q) -> np.ndarray | float:
        return discriminant(self, q)

    @property
    def coef(self) -> np.ndarray:
        return self.alpha * self.labels

    def dual_objective(self) -> float:
        return dual_objective(self.alpha, self.labels, gram_matrix(self.support_points, self.kernel))


def dual_objective(alpha, labels, gram) -> float:
    v = alpha * labels
    return float(0.5 * v @ gram @ v - alpha.sum())


def kkt_violation(alpha, y, grad, C) -> float:
    """Maximal violating-pair gap of the dual optimality conditions."""
    score = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return 0.0
    return max(float(score[up].max() - score[low].min()), 0.0)


def _bias(alpha, y, grad, C) -> float:
    score = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(score[free].mean())
    # LIBSVM convention: midpoint of the interval allowed by the bound multipliers.
    at_upper = alpha >= C
    upper_lim = np.concatenate([score[(y > 0) & at_upper], score[(y < 0) & ~at_upper]])
    lower_lim = np.concatenate([score[(y > 0) & ~at_upper], score[(y < 0) & at_upper]])
    lo = lower_lim.max() if lower_lim.size else -np.inf
    hi = upper_lim.min() if upper_lim.size else np.inf
    if not np.isfinite(lo):
        return float(hi)
    if not np.isfinite(hi):
        return float(lo)
    return float(0.5 * (lo + hi))


def _residual(alpha, y, Q, C):
    grad = Q @ alpha - 1.0
    return grad, max(kkt_violation(alpha, y, grad, C), abs(float(alpha @ y)))


def _polish(alpha, y, Q, C):
    """Re-solve the free multipliers exactly on the current active set."""
    free = (alpha > 0) & (alpha < C)
    if not free.any():
        return None
    upper = alpha >= C
    nf = int(free.sum())
    a = np.zeros((nf + 1, nf + 1))
    a[:nf, :nf] = Q[np.ix_(free, free)]
    a[:nf, nf] = y[free]
    a[nf, :nf] = y[free]
    rhs = np.empty(nf + 1)
    rhs[:nf] = 1.0 - C * Q[np.ix_(free, upper)].sum(axis=1)
    rhs[nf] = -C * y[upper].sum()
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        return None
    af = sol[:nf]
    if not np.all(np.isfinite(af)) or af.min() < 0 or af.max() > C:
        return None
    out = alpha.copy()
    out[free] = af
    return out


def _check_labels(labels):
    y = np.asarray(labels, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two training points")
    if not np.all(np.abs(y) == 1):
        raise ValueError("SVM labels must be -1 or +1")
    if np.all(y == y[0]):
        raise SingleClass("all training labels are equal")
    return y


def fit(points, labels, kernel: KernelParams, C: float = 1.0, tol: float = DEFAULT_TOL,
        max_iter: int = MAX_ITER) -> SvmModel:
    """Solve the dual for raw arrays; see :func:`solve_dual`."""
    if C <= 0:
        raise ValueError("C must be positive")
    y = _check_labels(labels)
    pts = np.ascontiguousarray(points, dtype=float)
    K = gram_matrix(pts, kernel)
    Q = np.ascontiguousarray(y[:, None] * y[None, :] * K)
    alpha = np.zeros(len(y))
    grad = -np.ones(len(y))
    iters, _ = _backend.smo(Q, np.ascontiguousarray(y), float(C), float(tol), int(max_iter), alpha, grad)
    grad, res = _residual(alpha, y, Q, C)
    polished = _polish(alpha, y, Q, C)
    if polished is not None:
        pgrad, pres = _residual(polished, y, Q, C)
        if pres <= res:
            alpha, grad, res = polished, pgrad, pres
    if res > tol:
        raise NoConvergence(f"KKT residual {res:.3e} > tol {tol:.1e} after {iters} SMO steps")
    return SvmModel(pts.copy(), y.astype(np.int64), alpha, _bias(alpha, y, grad, C), float(C),
                    kernel, float(res), int(iters))


def solve_dual(train: LabeledPointSet, kernel: KernelParams, C: float = 1.0,
               tol: float = DEFAULT_TOL) -> SvmModel:
    """Fit the kernel SVM on a +/-1 labeled point set.

    Raises
    ------
    SingleClass
        If every label is the same.
    NoConvergence
        If the KKT residual stays above ``tol`` after the iteration cap.
    """
    train = train.to_svm()
    return fit(train.points, train.labels, kernel, C, tol)


def discriminant(model: SvmModel, q) -> np.ndarray | float:
    arr = np.asarray(q, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    out = np.empty(len(pts))
    coef = model.coef
    keep = coef != 0
    sv, cf = model.support_points[keep], coef[keep]
    for start in range(0, len(pts), 16384):
        chunk = pts[start:start + 16384]
        out[start:start + 16384] = kernel_matrix(chunk, sv, model.kernel) @ cf + model.bias
    return float(out[0]) if single else out


def brute_force_dual(train: LabeledPointSet, kernel: KernelParams, C: float = 1.0) -> SvmModel:
    """Global optimum by enumerating all lower/free/upper assignments (N <= 8)."""
    train = train.to_svm()
    n = len(train)
    if n > 8:
        raise TooLarge(f"brute force limited to N <= 8, got {n}")
    y = _check_labels(train.labels)
    K = gram_matrix(train.points, kernel)
    Q = y[:, None] * y[None, :] * K
    best_alpha, best_obj = None, np.inf
    feas_tol = 1e-12 * max(1.0, C)
    idx = np.arange(n)
    for free_bits in range(1 << n):
        free = np.array([(free_bits >> i) & 1 for i in range(n)], dtype=bool)
        rest = idx[~free]
        # every split of the non-free indices into lower/upper
        combos = list(itertools.product((0.0, C), repeat=len(rest)))
        uppers = np.array(combos, dtype=float).reshape(len(combos), len(rest))
        alphas = np.zeros((len(uppers), n))
        alphas[:, rest] = uppers
        nf = int(free.sum())
        if nf:
            a = np.zeros((nf + 1, nf + 1))
            a[:nf, :nf] = Q[np.ix_(free, free)]
            a[:nf, nf] = y[free]
            a[nf, :nf] = y[free]
            if np.linalg.cond(a) > 1e12:
                continue
            rhs = np.empty((nf + 1, len(uppers)))
            rhs[:nf] = 1.0 - Q[np.ix_(free, rest)] @ uppers.T
            rhs[nf] = -(uppers @ y[rest])
            sol = np.linalg.solve(a, rhs)
            alphas[:, free] = sol[:nf].T
            ok = np.all((alphas[:, free] >= -feas_tol) & (alphas[:, free] <= C + feas_tol), axis=1)
        else:
            ok = np.abs(alphas @ y) <= feas_tol
        if not ok.any():
            continue
        cand = alphas[ok]
        v = cand * y
        objs = 0.5 * np.einsum("ki,ij,kj->k", v, K, v) - cand.sum(axis=1)
        k = int(np.argmin(objs))
        if objs[k] < best_obj:
            best_obj, best_alpha = float(objs[k]), np.clip(cand[k], 0.0, C)
    grad, res = _residual(best_alpha, y, Q, C)
    return SvmModel(np.asarray(train.points, dtype=float).copy(), y.astype(np.int64), best_alpha,
                    _bias(best_alpha, y, grad, C), float(C), kernel, float(res), 0)


# model file -------------------------------------------------------------------

def format_model(model: SvmModel) -> str:
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"kernel {model.kernel.mode}",
        "sigma " + " ".join(repr(float(s)) for s in model.kernel.sigma),
        f"C {float(model.C)!r}",
        f"bias {float(model.bias)!r}",
        f"kkt_residual {float(model.kkt_residual)!r}",
        f"n {len(model.labels)}",
    ]
    for (x, y, z), lab, a in zip(model.support_points.tolist(), model.labels.tolist(), model.alpha.tolist()):
        lines.append(f"{x!r} {y!r} {z!r} {lab} {a!r}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> SvmModel:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if head[0] != MODEL_MAGIC or int(head[1]) != MODEL_VERSION:
        raise ValueError(f"not a {MODEL_MAGIC} v{MODEL_VERSION} file")
    meta = {}
    for ln in lines[1:7]:
        key, _, val = ln.partition(" ")
        meta[key] = val
    n = int(meta["n"])
    rows = [ln.split() for ln in lines[7:7 + n]]
    if len(rows) != n:
        raise ValueError("model file truncated")
    pts = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows]).reshape(-1, 3)
    kernel = KernelParams(meta["kernel"], [float(s) for s in meta["sigma"].split()])
    return SvmModel(pts, np.array([int(r[3]) for r in rows], dtype=np.int64),
                    np.array([float(r[4]) for r in rows]), float(meta["bias"]),
                    float(meta["C"]), kernel, float(meta["kkt_residual"]))


def as_point_set(model: SvmModel) -> LabeledPointSet:
    return LabeledPointSet(model.support_points, model.labels, SVM_PM1)
