"""Test objectives with certified smoothness constants.

Every problem carries a gradient-Lipschitz upper bound `smoothness_l`, a
convexity label, and (where known) the exact minimizer.  Convex instances
whose gap can be controlled by the gradient near the optimum additionally
carry a weak-convexity certificate: constants (k0, delta) such that

    (f(x) - f_star)^2 <= k0 * ||grad f(x)||^2   wherever ||grad f(x)||^2 <= delta.

`value` and `gradient` are batch-aware: they accept arrays of shape
(..., dim) and evaluate along the last axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError


class Convexity(enum.Enum):
    STRONGLY_CONVEX = "strongly_convex"
    CONVEX = "convex"
    NONCONVEX = "nonconvex"


@dataclass(frozen=True)
class Minimum:
    x_star: np.ndarray
    f_star: float


@dataclass(frozen=True)
class WeakConvexityCertificate:
    """(f - f_star)^2 <= k0 * ||grad||^2 on the region ||grad||^2 <= delta."""

    k0: float
    delta: float


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    smoothness_l: float
    convexity: Convexity
    strong_convexity_mu: Optional[float] = None
    minimum: Optional[Minimum] = None
    weak_convexity: Optional[WeakConvexityCertificate] = None


@dataclass(frozen=True)
class FiniteSumProblem:
    """f = (1/S) * sum_i f_i with per-component Problems and the aggregate.

    design/targets keep the raw (A, b) data when the components are
    least-squares rows; the minibatch oracle uses them for vectorized
    subsampled gradients.
    """

    components: tuple
    aggregate: Problem
    design: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None


def quadratic(spectrum, x_star=None) -> Problem:
    """f(x) = 1/2 * sum_i lambda_i * (x_i - x_star_i)^2.

    smoothness_l = max(lambda); strongly convex iff min(lambda) > 0.
    """
    lam = np.atleast_1d(np.asarray(spectrum, dtype=float))
    if lam.ndim != 1 or lam.size == 0:
        raise ParameterError("spectrum must be a non-empty 1-d sequence")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ParameterError("spectrum entries must be finite and non-negative")
    d = lam.size
    if x_star is None:
        xs = np.zeros(d)
    else:
        xs = np.broadcast_to(np.asarray(x_star, dtype=float), (d,)).astype(float)
    lam = lam.copy()
    lam.setflags(write=False)
    xs.setflags(write=False)

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(lam * (x - xs) ** 2, axis=-1)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return lam * (x - xs)

    lmin = float(lam.min())
    if lmin > 0.0:
        conv, mu = Convexity.STRONGLY_CONVEX, lmin
    else:
        conv, mu = Convexity.CONVEX, None
    return Problem(
        name="quadratic",
        dim=d,
        value=value,
        gradient=gradient,
        smoothness_l=float(lam.max()),
        convexity=conv,
        strong_convexity_mu=mu,
        minimum=Minimum(xs, 0.0),
    )


def pseudo_huber(dim: int) -> Problem:
    """f(x) = sum_i (sqrt(1 + x_i^2) - 1): convex, 1-smooth, quadratic near 0
    and linear far out, minimized at the origin.

    The weak-convexity certificate uses delta = 1/4.  On the low-gradient
    region sum x_i^2/(1+x_i^2) <= delta, the squared radius sum x_i^2 is
    maximized by concentrating all of it in a single coordinate, so the
    one-dimensional grid supremum below bounds every dimension.  k0 is that
    supremum inflated by 10%.
    """
    dim = int(dim)
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.sum(np.sqrt(1.0 + x * x) - 1.0, axis=-1)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return x / np.sqrt(1.0 + x * x)

    delta = 0.25
    t = np.linspace(0.0, 2.0, 20001)
    inside = (t * t) / (1.0 + t * t) <= delta
    radius_sq = float(np.max(t[inside]) ** 2)
    cert = WeakConvexityCertificate(k0=1.1 * radius_sq, delta=delta)

    return Problem(
        name="pseudo_huber",
        dim=dim,
        value=value,
        gradient=gradient,
        smoothness_l=1.0,
        convexity=Convexity.CONVEX,
        minimum=Minimum(np.zeros(dim), 0.0),
        weak_convexity=cert,
    )


def smooth_rastrigin(dim: int, amplitude: float) -> Problem:
    """f(x) = sum_i [x_i^2 + amplitude * (1 - cos 2 pi x_i)].

    Second derivative per coordinate lies in [2 - 4 pi^2 A, 2 + 4 pi^2 A],
    so smoothness_l = 2 + 4 pi^2 A, and the problem is nonconvex exactly when
    the lower end is negative.  Global minimum at the origin with value 0.
    """
    dim = int(dim)
    amplitude = float(amplitude)
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if amplitude <= 0 or not np.isfinite(amplitude):
        raise ParameterError(f"amplitude must be positive and finite, got {amplitude}")
    two_pi = 2.0 * np.pi

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x + amplitude * (1.0 - np.cos(two_pi * x)), axis=-1)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x + amplitude * two_pi * np.sin(two_pi * x)

    curvature_lo = 2.0 - amplitude * two_pi ** 2
    if curvature_lo > 0.0:
        conv, mu = Convexity.STRONGLY_CONVEX, curvature_lo
    elif curvature_lo == 0.0:
        conv, mu = Convexity.CONVEX, None
    else:
        conv, mu = Convexity.NONCONVEX, None
    return Problem(
        name="smooth_rastrigin",
        dim=dim,
        value=value,
        gradient=gradient,
        smoothness_l=2.0 + amplitude * two_pi ** 2,
        convexity=conv,
        strong_convexity_mu=mu,
        minimum=Minimum(np.zeros(dim), 0.0),
    )


def power_iteration_lmax(mat: np.ndarray, tol: float = 1e-10, max_iter: int = 100000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[0]
    if mat.shape != (d, d):
        raise ParameterError("matrix must be square")
    # Deterministic start with energy in every eigendirection with
    # overwhelming probability; a fixed counter-based stream keeps runs
    # reproducible.
    from .rng import stream

    v = stream(0x9E3779B97F4A7C15).standard_normal(d)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        v = np.ones(d)
        nrm = np.linalg.norm(v)
    v /= nrm
    lam = 0.0
    for _ in range(max_iter):
        w = mat @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (mat @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def least_squares_sum(design, targets) -> FiniteSumProblem:
    """Finite sum of least-squares rows: f_i(x) = 1/2 * (a_i . x - b_i)^2.

    The aggregate is f = (1/S) sum_i f_i with smoothness
    lambda_max((1/S) A^T A), computed by power iteration (tolerance 1e-10)
    and inflated by 1e-6 so the constant stays a certified upper bound.
    """
    a = np.asarray(design, dtype=float)
    b = np.asarray(targets, dtype=float)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ParameterError("design must be a non-empty (S, dim) matrix")
    s_count, d = a.shape
    if b.shape != (s_count,):
        raise ParameterError("targets must have one entry per design row")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ParameterError("design and targets must be finite")
    a.setflags(write=False)
    b.setflags(write=False)

    def component(i: int) -> Problem:
        ai = a[i]
        bi = float(b[i])

        def value(x, ai=ai, bi=bi):
            x = np.asarray(x, dtype=float)
            r = np.tensordot(x, ai, axes=([-1], [0])) - bi
            return 0.5 * r * r

        def gradient(x, ai=ai, bi=bi):
            x = np.asarray(x, dtype=float)
            r = np.tensordot(x, ai, axes=([-1], [0])) - bi
            return np.multiply.outer(r, ai)

        return Problem(
            name=f"least_squares_row_{i}",
            dim=d,
            value=value,
            gradient=gradient,
            smoothness_l=float(ai @ ai),
            convexity=Convexity.CONVEX,
        )

    components = tuple(component(i) for i in range(s_count))

    gram = (a.T @ a) / s_count

    def value(x):
        x = np.asarray(x, dtype=float)
        r = np.tensordot(x, a, axes=([-1], [1])) - b
        return 0.5 * np.sum(r * r, axis=-1) / s_count

    def gradient(x):
        x = np.asarray(x, dtype=float)
        r = np.tensordot(x, a, axes=([-1], [1])) - b
        return np.tensordot(r, a, axes=([-1], [0])) / s_count

    lmax = power_iteration_lmax(gram, tol=1e-10) * (1.0 + 1e-6)
    eigs = np.linalg.eigvalsh(gram)
    lmin = float(eigs[0])
    if lmin > 1e-12 * max(1.0, float(eigs[-1])):
        conv, mu = Convexity.STRONGLY_CONVEX, lmin
    else:
        conv, mu = Convexity.CONVEX, None
    x_star = np.linalg.lstsq(a, b, rcond=None)[0]
    f_star = float(value(x_star))
    aggregate = Problem(
        name="least_squares_sum",
        dim=d,
        value=value,
        gradient=gradient,
        smoothness_l=lmax,
        convexity=conv,
        strong_convexity_mu=mu,
        minimum=Minimum(x_star, f_star),
    )
    return FiniteSumProblem(components=components, aggregate=aggregate,
                            design=a, targets=b)


def check_gradient(p: Problem, x, step: float | None = None) -> float:
    """Max relative error between p.gradient and central differences at x.

    Relative error per coordinate is |fd_i - g_i| / (1 + |g_i|); the default
    step is 1e-6 * (1 + ||x||).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,):
        raise ParameterError(f"x must have shape ({p.dim},)")
    if step is None:
        step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    if step <= 0:
        raise ParameterError("step must be positive")
    g = p.gradient(x)
    worst = 0.0
    for i in range(p.dim):
        e = np.zeros(p.dim)
        e[i] = step
        fd = (float(p.value(x + e)) - float(p.value(x - e))) / (2.0 * step)
        rel = abs(fd - g[i]) / (1.0 + abs(g[i]))
        worst = max(worst, rel)
    return worst
