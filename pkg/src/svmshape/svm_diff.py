"""Gradients of the SVM discriminant through the dual solve.

With the active set held fixed, the free multipliers and the bias solve

    [Q_FF  y_F] [alpha_F]   [1 - C * Q_FU 1]
    [y_F^T   0] [   b   ] = [ -C * y_U^T 1 ]

so their sensitivities follow from one adjoint solve with the same matrix.
The gradient of ``sum_q u_q P(q)`` then reduces to kernel derivatives
weighted by products of multipliers, adjoints and upstream values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateActiveSet, SingleClass, SingularKkt, NoConvergence
from .svm_core import ISOTROPIC, KernelParams, SvmModel, discriminant, fit, kernel_matrix

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ActiveSetPartition:
    free: np.ndarray
    at_lower: np.ndarray
    at_upper: np.ndarray
    epsilon: float

    def key(self) -> tuple:
        return (tuple(self.free), tuple(self.at_lower), tuple(self.at_upper))


@dataclass(frozen=True)
class SvmGradients:
    d_support: np.ndarray
    d_sigma: np.ndarray
    d_query: np.ndarray
    d_bias_path_included: bool = True


def partition_active_set(model: SvmModel, epsilon: float | None = None) -> ActiveSetPartition:
    """Split multipliers into free / lower / upper sets by threshold.

    ``epsilon`` defaults to ``1e-6 * C``.
    """
    eps = 1e-6 * model.C if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    a = model.alpha
    lower = a <= eps
    upper = ~lower & (a >= model.C - eps)
    free = ~lower & ~upper
    if not free.any():
        raise DegenerateActiveSet("no multiplier strictly inside (0, C)")
    idx = np.arange(len(a))
    return ActiveSetPartition(idx[free], idx[lower], idx[upper], eps)


def _axis_weights(kernel: KernelParams):
    w = kernel.inverse_scales()
    if kernel.mode == ISOTROPIC:
        s = kernel.sigma[0]
        dw_dsigma = np.array([-1.0 / s ** 3])
    else:
        dw_dsigma = -2.0 / kernel.sigma ** 3
    return w, dw_dsigma


def _sigma_grad(kernel, dw, dw_dsigma):
    if kernel.mode == ISOTROPIC:
        return np.array([dw.sum() * dw_dsigma[0]])
    return dw * dw_dsigma


def _reject_coincident(x: np.ndarray, part: ActiveSetPartition) -> None:
    # A duplicated point splits its weight arbitrarily between the copies, so
    # the solution map is not differentiable there even when the free block
    # happens to hold only one copy.
    active = np.zeros(len(x), dtype=bool)
    active[part.free] = active[part.at_upper] = True
    _, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(active & (counts[inverse] > 1)):
        raise SingularKkt("duplicate points make the KKT system rank deficient")


def backward_discriminant(model: SvmModel, queries, upstream, eps: float | None = None) -> SvmGradients:
    """Vector-Jacobian product of ``q -> P(q)`` w.r.t. support points, sigma and queries.

    ``upstream`` holds one weight per query; the result is the gradient of
    ``sum_q upstream[q] * P(queries[q])`` including the path through the bias.

    Raises
    ------
    DegenerateActiveSet
        If no multiplier is free.
    SingularKkt
        If the reduced KKT matrix has condition number above 1e12, or a
        point with nonzero multiplier coincides with another point.
    """
    part = partition_active_set(model, eps)
    x = model.support_points
    _reject_coincident(x, part)
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    u = np.asarray(upstream, dtype=float).reshape(-1)
    if len(u) != len(q):
        raise ValueError("upstream must have one entry per query")
    y = model.labels.astype(float)
    alpha = model.alpha
    F = part.free
    w, dw_dsigma = _axis_weights(model.kernel)

    K = kernel_matrix(x, x, model.kernel)
    Kq = kernel_matrix(x, q, model.kernel)  # (N, Q)

    nf = len(F)
    a = np.zeros((nf + 1, nf + 1))
    a[:nf, :nf] = (y[F, None] * y[None, F]) * K[np.ix_(F, F)]
    a[:nf, nf] = y[F]
    a[nf, :nf] = y[F]
    if np.linalg.cond(a) > MAX_CONDITION:
        raise SingularKkt("reduced KKT matrix is numerically singular")
    rhs = np.empty(nf + 1)
    rhs[:nf] = y[F] * (Kq[F] @ u)
    rhs[nf] = u.sum()
    lam = np.linalg.solve(a, rhs)

    # Pairwise weights on K(x_i, x_j) from the implicit term, and on K(x_i, q)
    # from the direct term.
    S = np.zeros_like(K)
    S[F] = -(lam[:nf] * y[F])[:, None] * (y * alpha)[None, :]
    S *= K
    S_sym = S + S.T
    T = (alpha * y)[:, None] * u[None, :] * Kq

    d_support = np.zeros_like(x)
    d_query = np.zeros_like(q)
    dw = np.zeros(3)
    for d in range(3):
        D = x[:, d, None] - x[None, :, d]
        E = x[:, d, None] - q[None, :, d]
        d_support[:, d] = -2.0 * w[d] * ((S_sym * D).sum(axis=1) + (T * E).sum(axis=1))
        d_query[:, d] = 2.0 * w[d] * (T * E).sum(axis=0)
        dw[d] = -(S * D * D).sum() - (T * E * E).sum()
    return SvmGradients(d_support, _sigma_grad(model.kernel, dw, dw_dsigma), d_query, True)


@dataclass
class GradcheckReport:
    max_rel_err: float = 0.0
    worst_coordinate: str = ""
    rows: list = field(default_factory=list)
    unstable: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and not self.unstable

    def table(self) -> str:
        out = ["coordinate analytic numeric rel_err"]
        out += [f"{c} {a:.10e} {n:.10e} {r:.3e}" for c, a, n, r in self.rows]
        return "\n".join(out)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(points, labels, kernel: KernelParams, C: float, queries,
                      h: float = 1e-4, seed: int = 0, upstream=None) -> GradcheckReport:
    """Compare :func:`backward_discriminant` with central differences.

    Every support coordinate, sigma component and query coordinate is
    perturbed by ``+-h``; the QP is re-solved for the first two.  A flipped
    active set marks the report unstable instead of failing.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    points = np.array(points, dtype=float)
    queries = np.array(queries, dtype=float)
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, len(queries)) if upstream is None else np.asarray(upstream, float)
    report = GradcheckReport()
    try:
        model = fit(points, labels, kernel, C)
        part = partition_active_set(model)
        grads = backward_discriminant(model, queries, u)
    except (DegenerateActiveSet, SingularKkt, SingleClass, NoConvergence) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        return report
    base_key = part.key()

    def objective(pts, sig, qs):
        m = fit(pts, labels, KernelParams(kernel.mode, sig), C)
        try:
            if partition_active_set(m).key() != base_key:
                report.unstable = True
        except DegenerateActiveSet:
            report.unstable = True
        return float(u @ discriminant(m, qs))

    def check(name, analytic, plus, minus):
        numeric = (plus - minus) / (2 * h)
        err = relative_error(analytic, numeric)
        report.rows.append((name, float(analytic), numeric, err))
        if err > report.max_rel_err or not report.worst_coordinate:
            report.max_rel_err, report.worst_coordinate = max(err, report.max_rel_err), name

    sig = kernel.sigma.copy()
    for i in range(len(points)):
        for d in range(3):
            p, m = points.copy(), points.copy()
            p[i, d] += h
            m[i, d] -= h
            check(f"x[{i},{d}]", grads.d_support[i, d], objective(p, sig, queries), objective(m, sig, queries))
    for d in range(len(sig)):
        p, m = sig.copy(), sig.copy()
        p[d] += h
        m[d] -= h
        check(f"sigma[{d}]", grads.d_sigma[d], objective(points, p, queries), objective(points, m, queries))
    for k in range(len(queries)):
        for d in range(3):
            p, m = queries.copy(), queries.copy()
            p[k, d] += h
            m[k, d] -= h
            check(f"q[{k},{d}]", grads.d_query[k, d], float(u @ discriminant(model, p)),
                  float(u @ discriminant(model, m)))
    return report


def random_instance(rng: np.random.Generator, n: int = 8, n_queries: int = 4, mode: str = "anisotropic",
                    C: float = 1.0, margin: float = 1e-3, max_tries: int = 100):
    """Draw a gradcheck instance whose free multipliers sit ``margin`` away from the bounds."""
    for _ in range(max_tries):
        pts = rng.uniform(-0.5, 0.5, (n, 3))
        labels = np.array([1] * (n // 2) + [-1] * (n - n // 2))
        sig = rng.uniform(0.25, 0.6, 1 if mode == ISOTROPIC else 3)
        kernel = KernelParams(mode, sig)
        queries = rng.uniform(-0.5, 0.5, (n_queries, 3))
        try:
            model = fit(pts, labels, kernel, C)
            part = partition_active_set(model)
        except (DegenerateActiveSet, NoConvergence):
            continue
        a = model.alpha
        free_margin = np.minimum(a[part.free], C - a[part.free]).min()
        bounded = np.concatenate([part.at_lower, part.at_upper])
        if free_margin > margin and np.all((a[bounded] == 0) | (a[bounded] == C)):
            return pts, labels, kernel, queries
    raise DegenerateActiveSet("could not draw a non-degenerate instance")
