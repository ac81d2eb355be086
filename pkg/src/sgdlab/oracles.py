"""Stochastic gradient oracles with declared noise bounds.

An oracle returns F(x, xi) = grad f(x) - xi where the noise xi has zero
conditional mean and declared second-moment bound

    E[ ||xi||^2 | x ] <= m_const + v_const * ||grad f(x)||^2.

Three families are provided: additive Gaussian noise, minibatch subsampling
of a finite sum (unbiased by construction), and relative noise of magnitude
proportional to the gradient.  `verify_bound` checks the declared constants
against empirical moments.

Each oracle owns one counter-based random stream; `with_key` clones an
oracle onto a fresh stream so replicas stay independent while every stream
remains replayable.  Raw randomness (normals, index draws) is separated
from its deterministic application to a point, which lets the experiment
driver pre-draw blocks per replica without changing any stream's contents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .problems import FiniteSumProblem, Problem
from .rng import stream, derive_key


@dataclass(frozen=True)
class NoiseBound:
    """Declared constants of the conditional second-moment bound."""

    m_const: float
    v_const: float
    empirical: bool = False

    def __post_init__(self):
        if self.m_const < 0 or self.v_const < 0:
            raise ParameterError("noise bound constants must be non-negative")


@dataclass(frozen=True)
class OracleSample:
    """One stochastic gradient; stoch_grad + noise = grad f(x) exactly."""

    stoch_grad: np.ndarray
    noise: np.ndarray


class GradientOracle:
    """Base class: owns a stream, declares a bound, applies raw draws.

    Subclasses implement `_raw(rng, n)` -> (n, ...) raw randomness and
    `_apply(x, grad, raw)` -> stochastic gradients, vectorized over leading
    axes of raw (and of x where shapes allow).
    """

    kind = "abstract"
    needs_gradient = True   # whether _apply requires grad f at the point
    zero_noise = False      # True iff the noise is identically the zero vector

    def __init__(self, problem: Problem, bound: NoiseBound, key: int):
        self.problem = problem
        self.bound = bound
        self._key = int(key)
        self._rng = stream(self._key)

    # -- stream management -------------------------------------------------

    def with_key(self, key: int) -> "GradientOracle":
        """Clone onto a fresh stream with the given 128-bit key."""
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone._key = int(key)
        clone._rng = stream(clone._key)
        return clone

    # -- sampling ----------------------------------------------------------

    def _raw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _apply(self, x: np.ndarray, grad, raw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def raw_block(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw raw randomness for n consecutive iterations from ``rng``."""
        return self._raw(rng, n)

    def stoch_grad(self, x: np.ndarray, raw: np.ndarray, grad=None) -> np.ndarray:
        """Apply one (or a batch of) raw draws at x."""
        if grad is None and self.needs_gradient:
            grad = self.problem.gradient(x)
        return self._apply(x, grad, raw)

    def sample(self, x) -> OracleSample:
        """Draw one stochastic gradient at x from the oracle's own stream."""
        x = np.asarray(x, dtype=float)
        grad = self.problem.gradient(x)
        raw = self._raw(self._rng, 1)[0]
        sg = self._apply(x, grad, raw)
        return OracleSample(stoch_grad=sg, noise=grad - sg)


class _GaussianOracle(GradientOracle):
    kind = "gaussian"

    def __init__(self, problem: Problem, sigma: float, key: int):
        if sigma < 0 or not np.isfinite(sigma):
            raise ParameterError(f"sigma must be non-negative and finite, got {sigma}")
        self.sigma = float(sigma)
        self.zero_noise = self.sigma == 0.0
        bound = NoiseBound(m_const=self.sigma ** 2 * problem.dim, v_const=0.0)
        super().__init__(problem, bound, key)

    def _raw(self, rng, n):
        return rng.standard_normal((n, self.problem.dim))

    def _apply(self, x, grad, raw):
        # xi = sigma * standard normal; sigma = 0 gives exactly grad back.
        return grad - self.sigma * raw


class _RelativeNoiseOracle(GradientOracle):
    kind = "relative_noise"

    def __init__(self, problem: Problem, eta: float, key: int):
        if eta < 0 or not np.isfinite(eta):
            raise ParameterError(f"eta must be non-negative and finite, got {eta}")
        self.eta = float(eta)
        self.zero_noise = self.eta == 0.0
        bound = NoiseBound(m_const=0.0, v_const=self.eta ** 2)
        super().__init__(problem, bound, key)

    def _raw(self, rng, n):
        return rng.standard_normal((n, self.problem.dim))

    def _apply(self, x, grad, raw):
        # xi = eta * ||grad|| * u with u uniform on the sphere.
        nrm = np.linalg.norm(raw, axis=-1, keepdims=True)
        u = np.divide(raw, nrm, out=np.zeros_like(raw), where=nrm > 0)
        gnorm = np.linalg.norm(np.asarray(grad, dtype=float), axis=-1, keepdims=True)
        return grad - self.eta * gnorm * u


class _MinibatchOracle(GradientOracle):
    kind = "minibatch"
    needs_gradient = False

    def __init__(self, fsp: FiniteSumProblem, batch: int, replace: bool, key: int):
        batch = int(batch)
        s_count = len(fsp.components)
        if not 1 <= batch <= s_count:
            raise ParameterError(f"batch must lie in [1, {s_count}], got {batch}")
        if not replace and batch > s_count:
            raise ParameterError("batch cannot exceed the component count without replacement")
        self.fsp = fsp
        self.batch = batch
        self.replace = bool(replace)
        bound = _minibatch_bound(fsp, batch, self.replace)
        super().__init__(fsp.aggregate, bound, key)

    def _raw(self, rng, n):
        s_count = len(self.fsp.components)
        if self.replace:
            return rng.integers(0, s_count, size=(n, self.batch), dtype=np.int64)
        # Random distinct indices per draw: argsort of iid uniforms is a
        # uniform permutation; keep the first `batch` entries.
        u = rng.random((n, s_count))
        return np.argsort(u, axis=-1)[:, : self.batch]

    def _apply(self, x, grad, raw):
        # One code path for every input shape, so single states and replica
        # batches run the identical arithmetic (bitwise).
        x = np.asarray(x, dtype=float)
        raw = np.asarray(raw)
        single_draw = raw.ndim == 1
        idx = raw[None, :] if single_draw else raw
        xs = x[None, :] if x.ndim == 1 else x
        if xs.shape[0] == 1 and idx.shape[0] != 1:
            xs = np.broadcast_to(xs, (idx.shape[0], xs.shape[1]))
        if self.fsp.design is not None:
            # Vectorized least-squares rows: one gather + two contractions.
            a_sel = self.fsp.design[idx]                      # (R, batch, d)
            b_sel = self.fsp.targets[idx]                     # (R, batch)
            resid = np.einsum("rbd,rd->rb", a_sel, xs) - b_sel
            out = np.einsum("rb,rbd->rd", resid, a_sel) / self.batch
        else:
            out = np.stack([
                np.mean([self.fsp.components[j].gradient(xs[r]) for j in idx[r]], axis=0)
                for r in range(xs.shape[0])
            ])
        return out[0] if single_draw else out


def _minibatch_bound(fsp: FiniteSumProblem, batch: int, replace: bool) -> NoiseBound:
    """Declared (M, V) for subsampling noise.

    With replacement, E||xi||^2 = (1/batch) * (mean_i ||grad f_i||^2 - ||grad f||^2),
    and sampling without replacement only shrinks it, so one bound covers both.
    For least-squares rows with a positive-definite Gram matrix there is a
    closed form: writing x_hat for the least-squares solution and r for its
    residual, ||grad f_i(x)||^2 <= 2 max||a_i||^2 max r_i^2
    + 2 max||a_i||^4 ||x - x_hat||^2 and ||grad f(x)||^2 >= lmin^2 ||x - x_hat||^2.
    Otherwise (M, V) are fit to exact per-point second moments on a fixed
    point grid and inflated by 50%, flagged empirical.
    """
    agg = fsp.aggregate
    if fsp.design is not None:
        a, b = fsp.design, fsp.targets
        gram = (a.T @ a) / a.shape[0]
        lmin = float(np.linalg.eigvalsh(gram)[0])
        if lmin > 1e-12:
            row_sq = np.sum(a * a, axis=1)
            x_hat = agg.minimum.x_star
            resid = a @ x_hat - b
            m_const = (2.0 / batch) * float(row_sq.max()) * float(np.max(resid ** 2))
            v_const = (2.0 / batch) * float(row_sq.max()) ** 2 / lmin ** 2
            return NoiseBound(m_const=m_const, v_const=v_const, empirical=False)

    # Empirical fallback: exact conditional second moments on a fixed grid.
    pts = stream(derive_key(0xB0D5, 0)).standard_normal((64, agg.dim)) * 3.0
    s_count = len(fsp.components)
    e2 = np.empty(len(pts))
    gsq = np.empty(len(pts))
    for i, x in enumerate(pts):
        comp = np.stack([c.gradient(x) for c in fsp.components])
        g = agg.gradient(x)
        pop_var = float(np.mean(np.sum((comp - g) ** 2, axis=1)))
        fpc = 1.0 if replace else 1.0 - (batch - 1.0) / max(s_count - 1.0, 1.0)
        e2[i] = fpc * pop_var / batch
        gsq[i] = float(g @ g)
    from scipy.optimize import nnls

    coef, _ = nnls(np.column_stack([np.ones_like(gsq), gsq]), e2)
    m_const, v_const = float(coef[0]), float(coef[1])
    slack = e2 - (m_const + v_const * gsq)
    m_const += max(0.0, float(slack.max()))
    return NoiseBound(m_const=1.5 * m_const, v_const=1.5 * v_const, empirical=True)


def gaussian_oracle(p: Problem, sigma: float, seed: int = 0) -> GradientOracle:
    """F = grad f(x) - xi with xi ~ N(0, sigma^2 I): M = sigma^2 * dim, V = 0."""
    return _GaussianOracle(p, sigma, derive_key(seed, 0))


def relative_noise_oracle(p: Problem, eta: float, seed: int = 0) -> GradientOracle:
    """xi = eta * ||grad f(x)|| * u, u uniform on the sphere: M = 0, V = eta^2."""
    return _RelativeNoiseOracle(p, eta, derive_key(seed, 0))


def minibatch_oracle(fsp: FiniteSumProblem, batch: int, replace: bool = True,
                     seed: int = 0) -> GradientOracle:
    """Average of `batch` uniformly sampled component gradients (unbiased)."""
    return _MinibatchOracle(fsp, batch, replace, derive_key(seed, 0))


@dataclass(frozen=True)
class PointCheck:
    x: np.ndarray
    mean_norm: float
    mean_tol: float
    second_moment: float
    declared_bound: float
    second_tol: float
    mean_ok: bool
    second_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.second_ok


@dataclass(frozen=True)
class BoundReport:
    checks: tuple
    samples: int

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def verify_bound(oracle: GradientOracle, p: Problem, points, samples: int) -> BoundReport:
    """Empirically check zero mean and the declared second-moment bound.

    At each point the empirical mean noise must satisfy
    ||mean xi|| <= 3 * sqrt(sum_j var_j / samples) (per-coordinate standard
    errors summed in quadrature) and the empirical second moment must stay
    within 4 standard errors of the declared bound, plus a relative rounding
    epsilon: oracles whose noise magnitude is deterministic (e.g. relative
    noise, where ||xi|| = eta * ||grad|| exactly) have zero-variance second
    moments, so the standard-error band alone cannot absorb float rounding.
    """
    samples = int(samples)
    if samples < 1000:
        raise ParameterError(f"samples must be >= 1000, got {samples}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != p.dim:
        raise ParameterError(f"points must have dimension {p.dim}")
    checks = []
    for x in pts:
        grad = p.gradient(x)
        raw = oracle._raw(oracle._rng, samples)
        sg = oracle.stoch_grad(x, raw, grad=grad)
        xi = grad - sg
        mean = xi.mean(axis=0)
        if samples > 1:
            coord_var = xi.var(axis=0, ddof=1)
        else:
            coord_var = np.zeros(p.dim)
        mean_tol = 3.0 * float(np.sqrt(coord_var.sum() / samples))
        sq = np.sum(xi * xi, axis=1)
        m2 = float(sq.mean())
        se2 = float(sq.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
        declared = oracle.bound.m_const + oracle.bound.v_const * float(grad @ grad)
        mean_norm = float(np.linalg.norm(mean))
        second_tol = 4.0 * se2 + 1e-12 * max(1.0, declared)
        checks.append(PointCheck(
            x=x.copy(),
            mean_norm=mean_norm,
            mean_tol=mean_tol,
            second_moment=m2,
            declared_bound=declared,
            second_tol=second_tol,
            mean_ok=mean_norm <= mean_tol,
            second_ok=m2 <= declared + second_tol,
        ))
    return BoundReport(checks=tuple(checks), samples=samples)
